//! Output-space distortion measures.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Softmax with max-subtraction.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_label(label: usize, m: usize) -> Result<()> {
    if label >= m {
        return Err(invalid(format!("label {label} out of range for {m} outputs")));
    }
    Ok(())
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(invalid(format!(
            "output lengths differ or are empty ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `C · (ref[j*] − pert[j*])²` on pre-softmax scores.
pub fn d1_presoftmax(reference: &[f64], perturbed: &[f64], label: usize, scale: f64) -> Result<f64> {
    check_lengths(reference, perturbed)?;
    check_label(label, reference.len())?;
    let diff = reference[label] - perturbed[label];
    Ok(scale * diff * diff)
}

/// Squared difference of the softmax probabilities at `j*`.
pub fn d2_postsoftmax(reference: &[f64], perturbed: &[f64], label: usize) -> Result<f64> {
    check_lengths(reference, perturbed)?;
    check_label(label, reference.len())?;
    let diff = softmax(reference)[label] - softmax(perturbed)[label];
    Ok(diff * diff)
}

/// `Σ_{j∈J} (ref[j] − pert[j])²`.
pub fn d_subset_l2(reference: &[f64], perturbed: &[f64], subset: &[usize]) -> Result<f64> {
    check_lengths(reference, perturbed)?;
    if subset.is_empty() {
        return Err(invalid("component subset J is empty"));
    }
    let mut acc = 0.0;
    for &j in subset {
        check_label(j, reference.len())?;
        let d = reference[j] - perturbed[j];
        acc += d * d;
    }
    Ok(acc)
}

/// A configured measure `d(Φ(x), Φ(y))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Distortion {
    PreSoftmax { label: usize, scale: f64 },
    PostSoftmax { label: usize },
    /// `None` uses every component (squared ℓ2 distance).
    SubsetL2 { indices: Option<Vec<usize>> },
}

impl Distortion {
    pub fn squared_l2() -> Self {
        Distortion::SubsetL2 { indices: None }
    }

    pub fn evaluate(&self, reference: &[f64], perturbed: &[f64]) -> Result<f64> {
        match self {
            Distortion::PreSoftmax { label, scale } => d1_presoftmax(reference, perturbed, *label, *scale),
            Distortion::PostSoftmax { label } => d2_postsoftmax(reference, perturbed, *label),
            Distortion::SubsetL2 { indices: Some(j) } => d_subset_l2(reference, perturbed, j),
            Distortion::SubsetL2 { indices: None } => {
                check_lengths(reference, perturbed)?;
                Ok(reference
                    .iter()
                    .zip(perturbed)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum())
            }
        }
    }

    /// Gradient of `d(reference, ·)` at `perturbed`.
    pub fn gradient(&self, reference: &[f64], perturbed: &[f64]) -> Result<Vec<f64>> {
        check_lengths(reference, perturbed)?;
        let m = reference.len();
        let mut g = vec![0.0; m];
        match self {
            Distortion::PreSoftmax { label, scale } => {
                check_label(*label, m)?;
                g[*label] = -2.0 * scale * (reference[*label] - perturbed[*label]);
            }
            Distortion::PostSoftmax { label } => {
                check_label(*label, m)?;
                let p_ref = softmax(reference)[*label];
                let p = softmax(perturbed);
                let outer = -2.0 * (p_ref - p[*label]);
                // ∂p_j*/∂z_i = p_j* (δ_ij* − p_i)
                for (i, gi) in g.iter_mut().enumerate() {
                    let delta = if i == *label { 1.0 } else { 0.0 };
                    *gi = outer * p[*label] * (delta - p[i]);
                }
            }
            Distortion::SubsetL2 { indices } => {
                let all: Vec<usize>;
                let subset = match indices {
                    Some(j) => {
                        if j.is_empty() {
                            return Err(invalid("component subset J is empty"));
                        }
                        j
                    }
                    None => {
                        all = (0..m).collect();
                        &all
                    }
                };
                for &j in subset {
                    check_label(j, m)?;
                    g[j] += -2.0 * (reference[j] - perturbed[j]);
                }
            }
        }
        Ok(g)
    }
}
