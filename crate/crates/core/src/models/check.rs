use serde::Serialize;

use super::Network;
use crate::error::Result;
use crate::objective::Model;
use crate::types::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// A relu changes state within the stencil; excluded from pass/fail.
    NonSmooth,
}

#[derive(Clone, Debug, Serialize)]
pub struct FiniteDiffReport {
    pub max_relative_error: f64,
    pub status: CheckStatus,
}

impl FiniteDiffReport {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

/// Compares `input_gradient` for each canonical cotangent against central
/// differences with step `h`. The relative error of output `j` is
/// `‖g − fd‖₂ / max(‖fd‖₂, 1e-8)`.
pub fn finite_diff_check(model: &dyn Model, x: &Signal, tolerance: f64, h: f64) -> Result<FiniteDiffReport> {
    finite_diff_with_kinks(model, x, tolerance, h, |_| Ok(None))
}

/// Like [`finite_diff_check`] but flags relu kinks inside the stencil.
pub fn finite_diff_check_network(net: &Network, x: &Signal, tolerance: f64, h: f64) -> Result<FiniteDiffReport> {
    let base = net.activation_pattern(x.values())?;
    finite_diff_with_kinks(net, x, tolerance, h, |probe| {
        Ok(Some(net.activation_pattern(probe)? != base))
    })
}

fn finite_diff_with_kinks(
    model: &dyn Model,
    x: &Signal,
    tolerance: f64,
    h: f64,
    mut kink: impl FnMut(&[f64]) -> Result<Option<bool>>,
) -> Result<FiniteDiffReport> {
    let n = x.len();
    let m = model.output_dim();
    let mut non_smooth = false;
    // columns of the Jacobian from central differences
    let mut jac = vec![0.0; n * m];
    for i in 0..n {
        let mut plus = x.values().to_vec();
        let mut minus = x.values().to_vec();
        plus[i] += h;
        minus[i] -= h;
        if kink(&plus)? == Some(true) || kink(&minus)? == Some(true) {
            non_smooth = true;
        }
        let fp = model.forward(&Signal::new(plus, x.shape().clone())?)?;
        let fm = model.forward(&Signal::new(minus, x.shape().clone())?)?;
        for j in 0..m {
            jac[j * n + i] = (fp[j] - fm[j]) / (2.0 * h);
        }
    }
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let g = model.input_gradient(x, &e)?;
        let fd = &jac[j * n..(j + 1) * n];
        let diff = g.iter().zip(fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-8));
    }
    let status = if non_smooth {
        CheckStatus::NonSmooth
    } else if worst <= tolerance {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(FiniteDiffReport {
        max_relative_error: worst,
        status,
    })
}
