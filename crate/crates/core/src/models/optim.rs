use serde::{Deserialize, Serialize};

use crate::error::{RdeError, Result};

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(RdeError::Shape(format!(
                "adam state has {} entries, params {} and grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut a = Adam::new(3, 0.003);
        let mut p = vec![1.0, -2.0, 0.5];
        a.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_size() {
        let mut a = Adam::new(1, 0.003);
        let mut p = vec![0.0];
        a.step(&mut p, &[1.0]).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε)
        assert!((p[0] + 0.003 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((p[0] + 0.002_999_999_97).abs() < 1e-12);
    }

    #[test]
    fn quadratic_objective_decreases() {
        let f = |x: f64| (x - 2.0).powi(2);
        let mut a = Adam::new(1, 0.1);
        let mut p = vec![0.0];
        let before = f(p[0]);
        for _ in 0..2 {
            let g = 2.0 * (p[0] - 2.0);
            a.step(&mut p, &[g]).unwrap();
        }
        assert!(f(p[0]) < before);
    }

    #[test]
    fn length_mismatch() {
        let mut a = Adam::new(2, 0.1);
        assert!(a.step(&mut [0.0], &[0.0]).is_err());
    }
}
