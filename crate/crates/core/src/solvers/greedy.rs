use std::time::Instant;

use rayon::prelude::*;

use super::{ExplanationResult, SolverConfig, SolverKind};
use crate::error::{invalid, Result};
use crate::objective::{DistortionEstimate, ProblemSet};
use crate::types::Mask;

/// Largest block count the oracle will enumerate.
pub const ORACLE_MAX_BLOCKS: usize = 20;

/// Supports of size at most `l` in lexicographic order of their sorted
/// index lists (the empty support first).
pub fn lexicographic_supports(k: usize, l: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, l: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        out.push(cur.clone());
        if cur.len() == l {
            return;
        }
        for j in start..k {
            cur.push(j);
            rec(k, l, j + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, l, 0, &mut Vec::new(), &mut out);
    out
}

/// Index of the smallest value, first occurrence on ties.
fn first_argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Binary mask minimizing `D` among all with `‖s‖₀ ≤ l`, evaluated on the
/// evaluation seed.
pub fn exhaustive_oracle(problem: &ProblemSet, l: usize, cfg: &SolverConfig) -> Result<(Mask, DistortionEstimate)> {
    let k = problem.num_blocks();
    if k > ORACLE_MAX_BLOCKS {
        return Err(invalid(format!("exhaustive oracle limited to {ORACLE_MAX_BLOCKS} blocks, got {k}")));
    }
    if l > k {
        return Err(invalid(format!("budget {l} exceeds the {k} blocks")));
    }
    let supports = lexicographic_supports(k, l);
    let estimates = supports
        .par_iter()
        .map(|sup| problem.estimate(&Mask::from_support(k, sup)?, cfg.samples, cfg.eval_seed))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let i = first_argmin(&means);
    Ok((Mask::from_support(k, &supports[i])?, estimates[i]))
}

/// Greedy pursuit from the empty mask, adding the block that most lowers
/// `D` on the evaluation seed until `‖s‖₀ = ℓ` or `D ≤ tolerance`.
pub fn matching_pursuit(problem: &ProblemSet, cfg: &SolverConfig) -> Result<ExplanationResult> {
    if cfg.kind != SolverKind::Pursuit {
        return Err(invalid(format!("solver config has type {:?}, expected pursuit", cfg.kind)));
    }
    let k = problem.num_blocks();
    cfg.validate(k)?;
    let budget = cfg.budget.unwrap_or(k);
    let start = Instant::now();
    let mut support: Vec<usize> = Vec::new();
    let mut current = problem.estimate(&Mask::zeros(k), cfg.samples, cfg.eval_seed)?;
    let mut trace = Vec::new();
    while support.len() < budget && current.mean > cfg.tolerance {
        let candidates: Vec<usize> = (0..k).filter(|j| !support.contains(j)).collect();
        let estimates = candidates
            .par_iter()
            .map(|&j| {
                let mut sup = support.clone();
                sup.push(j);
                problem.estimate(&Mask::from_support(k, &sup)?, cfg.samples, cfg.eval_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
        let i = first_argmin(&means);
        support.push(candidates[i]);
        current = estimates[i];
        trace.push(current.mean);
    }
    let mask = Mask::from_support(k, &support)?;
    Ok(ExplanationResult {
        l1_normalized: mask.normalized_l1(),
        mask,
        hard_mask: None,
        trace,
        distortion: current,
        selection_order: support,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}
