//! Mask solvers: projected-Adam ℓ1 relaxation, concrete Bernoulli
//! relaxation, greedy matching pursuit and an exhaustive oracle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::objective::{derive_seed, DistortionEstimate, ProblemSet};
use crate::types::Mask;

mod gradient;
mod greedy;

pub use gradient::{concrete_from_noise, concrete_sample, logistic_noise, solve_bernoulli, solve_l1};
pub use greedy::{exhaustive_oracle, lexicographic_supports, matching_pursuit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    L1,
    Bernoulli,
    Pursuit,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    #[serde(rename = "type")]
    pub kind: SolverKind,
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    pub samples: usize,
    pub temperature: f64,
    /// Sparsity budget ℓ for pursuit and the oracle.
    pub budget: Option<usize>,
    pub seed: u64,
    pub eval_seed: u64,
    /// Steps between best-iterate evaluations; 0 picks `steps / 10`.
    pub eval_every: usize,
    /// Pursuit stops once the distortion is at most this.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    /// Pixel RDE defaults: λ = 0.6, 2000 Adam steps at 0.003, 64 samples.
    fn default() -> Self {
        Self {
            kind: SolverKind::L1,
            lambda: 0.6,
            steps: 2000,
            lr: 0.003,
            samples: 64,
            temperature: 0.1,
            budget: None,
            seed: 0,
            eval_seed: 1_000_003,
            eval_every: 0,
            tolerance: 0.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.kind {
            SolverKind::L1 | SolverKind::Bernoulli => {
                if !(self.lambda > 0.0) {
                    return Err(invalid("lambda must be positive"));
                }
                if self.steps == 0 || self.samples == 0 {
                    return Err(invalid("steps and samples must be positive"));
                }
                if !(self.lr > 0.0) {
                    return Err(invalid("learning rate must be positive"));
                }
                if self.kind == SolverKind::Bernoulli && !(self.temperature > 0.0) {
                    return Err(invalid("temperature must be positive"));
                }
            }
            SolverKind::Pursuit | SolverKind::Exhaustive => {
                if self.samples == 0 {
                    return Err(invalid("samples must be positive"));
                }
                let l = self.budget.ok_or_else(|| invalid("pursuit and oracle need a sparsity budget"))?;
                if l > k {
                    return Err(invalid(format!("budget {l} exceeds the {k} blocks")));
                }
                if self.kind == SolverKind::Pursuit && l == 0 {
                    return Err(invalid("pursuit budget must be at least 1"));
                }
            }
        }
        Ok(())
    }

    fn eval_interval(&self) -> usize {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.steps / 10).max(1)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub mask: Mask,
    /// `θ > 0.5` for the Bernoulli solver.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_mask: Option<Mask>,
    pub trace: Vec<f64>,
    /// Held-out estimate on the evaluation seed.
    pub distortion: DistortionEstimate,
    pub l1_normalized: f64,
    /// Pursuit selection order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selection_order: Vec<usize>,
    /// Excluded from serialized output so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    pub config: SolverConfig,
}

/// Runs the solver named by `cfg.kind`.
pub fn solve(problem: &ProblemSet, cfg: &SolverConfig) -> Result<ExplanationResult> {
    match cfg.kind {
        SolverKind::L1 => solve_l1(problem, cfg),
        SolverKind::Bernoulli => solve_bernoulli(problem, cfg),
        SolverKind::Pursuit => matching_pursuit(problem, cfg),
        SolverKind::Exhaustive => {
            let start = Instant::now();
            cfg.validate(problem.num_blocks())?;
            let (mask, distortion) = exhaustive_oracle(problem, cfg.budget.unwrap_or(0), cfg)?;
            Ok(ExplanationResult {
                l1_normalized: mask.normalized_l1(),
                mask,
                hard_mask: None,
                trace: vec![distortion.mean],
                distortion,
                selection_order: vec![],
                wall_clock_secs: start.elapsed().as_secs_f64(),
                config: cfg.clone(),
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "snake_case")]
pub enum Sweep {
    Lambda(Vec<f64>),
    Budget(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub value: f64,
    pub l1_normalized: f64,
    pub distortion: DistortionEstimate,
    pub result: ExplanationResult,
}

/// One solver run per sweep value. Point `i` runs with seed
/// `derive_seed(template.seed, i)`.
pub fn rd_curve(problem: &ProblemSet, template: &SolverConfig, sweep: &Sweep) -> Result<Vec<CurvePoint>> {
    let configs: Vec<(f64, SolverConfig)> = match sweep {
        Sweep::Lambda(v) => v
            .iter()
            .map(|&l| {
                (
                    l,
                    SolverConfig {
                        lambda: l,
                        ..template.clone()
                    },
                )
            })
            .collect(),
        Sweep::Budget(v) => v
            .iter()
            .map(|&b| {
                (
                    b as f64,
                    SolverConfig {
                        budget: Some(b),
                        ..template.clone()
                    },
                )
            })
            .collect(),
    };
    if configs.is_empty() {
        return Err(invalid("sweep is empty"));
    }
    configs
        .into_iter()
        .enumerate()
        .map(|(i, (value, mut cfg))| {
            cfg.seed = derive_seed(template.seed, i as u64);
            let result = solve(problem, &cfg)?;
            Ok(CurvePoint {
                value,
                l1_normalized: result.l1_normalized,
                distortion: result.distortion,
                result,
            })
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::testing::linear_problem;
    use super::*;

    #[test]
    fn defaults_echo_pixel_rde() {
        let c = SolverConfig::default();
        assert_eq!((c.lambda, c.steps, c.lr, c.samples), (0.6, 2000, 0.003, 64));
        assert_eq!(c.temperature, 0.1);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig {
            kind: SolverKind::Pursuit,
            budget: Some(4),
            ..SolverConfig::default()
        };
        assert!(c.validate(3).is_err());
        c.budget = Some(3);
        assert!(c.validate(3).is_ok());
        let bad = SolverConfig {
            lambda: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate(3).is_err());
    }

    #[test]
    fn config_parses_from_json() {
        let c: SolverConfig = serde_json::from_str(r#"{"type":"bernoulli","lambda":50,"lr":1e-5}"#).unwrap();
        assert_eq!(c.kind, SolverKind::Bernoulli);
        assert_eq!(c.lambda, 50.0);
        assert_eq!(c.steps, 2000);
    }

    #[test]
    fn single_point_sweep_matches_direct_call() {
        let p = linear_problem(&[3.0, 0.0, 1.0]);
        let template = SolverConfig {
            steps: 50,
            lr: 0.05,
            samples: 1,
            lambda: 0.1,
            ..SolverConfig::default()
        };
        let pts = rd_curve(&p, &template, &Sweep::Lambda(vec![0.1])).unwrap();
        assert_eq!(pts.len(), 1);
        let direct = solve(
            &p,
            &SolverConfig {
                seed: derive_seed(template.seed, 0),
                ..template
            },
        )
        .unwrap();
        assert_eq!(pts[0].result.mask, direct.mask);
        assert_eq!(pts[0].distortion, direct.distortion);
    }

    #[test]
    fn budget_sweep_is_monotone() {
        let w = [0.5, -2.0, 1.0, 0.0, 3.0, 0.2, -0.7, 1.5];
        let p = linear_problem(&w);
        let template = SolverConfig {
            kind: SolverKind::Exhaustive,
            samples: 1,
            ..SolverConfig::default()
        };
        let pts = rd_curve(&p, &template, &Sweep::Budget((0..=8).collect())).unwrap();
        for pair in pts.windows(2) {
            assert!(pair[1].distortion.mean <= pair[0].distortion.mean);
        }
    }

    #[test]
    fn empty_sweep_rejected() {
        let p = linear_problem(&[1.0]);
        assert!(rd_curve(&p, &SolverConfig::default(), &Sweep::Lambda(vec![])).is_err());
    }
}
