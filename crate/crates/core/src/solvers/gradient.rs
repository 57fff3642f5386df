use std::time::Instant;

use rand::Rng;

use super::{ExplanationResult, SolverConfig, SolverKind};
use crate::error::{invalid, RdeError, Result};
use crate::models::Adam;
use crate::objective::{derive_seed, substream, ProblemSet};
use crate::types::Mask;

const THETA_MIN: f64 = 1e-6;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard logistic noise `ln u − ln(1 − u)`.
pub fn logistic_noise(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            u.ln() - (1.0 - u).ln()
        })
        .collect()
}

/// `sigmoid((logit θ + L) / t)` with θ clipped into `[1e-6, 1 − 1e-6]`.
pub fn concrete_from_noise(theta: &[f64], t: f64, noise: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .zip(noise)
        .map(|(&th, &l)| sigmoid((logit(th.clamp(THETA_MIN, 1.0 - THETA_MIN)) + l) / t))
        .collect()
}

/// A binary-concrete relaxed Bernoulli draw.
pub fn concrete_sample(theta: &[f64], t: f64, rng: &mut impl Rng) -> Result<Mask> {
    if !(t > 0.0) {
        return Err(invalid("temperature must be positive"));
    }
    let noise = logistic_noise(rng, theta.len());
    Ok(Mask::clamped(concrete_from_noise(theta, t, &noise)))
}

fn mean_gradient(grads: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut g = vec![0.0; k];
    for gi in grads {
        for (a, b) in g.iter_mut().zip(gi) {
            *a += b;
        }
    }
    let n = grads.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

fn check_kind(cfg: &SolverConfig, kind: SolverKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(invalid(format!("solver config has type {:?}, expected {kind:?}", cfg.kind)));
    }
    Ok(())
}

/// Projected Adam on `s ∈ [0,1]^k` for `D + λ‖s‖₁`, starting from all ones.
/// Returns the best iterate on the evaluation seed.
pub fn solve_l1(problem: &ProblemSet, cfg: &SolverConfig) -> Result<ExplanationResult> {
    check_kind(cfg, SolverKind::L1)?;
    let k = problem.num_blocks();
    cfg.validate(k)?;
    let start = Instant::now();
    let n = if problem.is_deterministic() { 1 } else { cfg.samples };
    let evaluate = |s: &Mask| -> Result<f64> {
        Ok(problem.estimate(s, cfg.samples, cfg.eval_seed)?.mean + cfg.lambda * s.sparsity_l1())
    };

    let mut s = vec![1.0; k];
    let mut best_mask = Mask::ones(k);
    let mut best = evaluate(&best_mask)?;
    let mut adam = Adam::new(k, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    let interval = cfg.eval_interval();
    for step in 0..cfg.steps {
        let mask = Mask::clamped(s.clone());
        let masks = vec![mask.clone(); n];
        let (d, grads) = problem.estimate_with_gradient(&masks, derive_seed(cfg.seed, step as u64))?;
        let objective = d + cfg.lambda * mask.sparsity_l1();
        if !objective.is_finite() {
            return Err(RdeError::NonFiniteObjective { step });
        }
        trace.push(objective);
        let mut g = mean_gradient(&grads, k);
        g.iter_mut().for_each(|v| *v += cfg.lambda);
        adam.step(&mut s, &g)?;
        s.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if (step + 1) % interval == 0 || step + 1 == cfg.steps {
            let candidate = Mask::clamped(s.clone());
            let value = evaluate(&candidate)?;
            if value < best {
                best = value;
                best_mask = candidate;
            }
        }
    }
    let distortion = problem.estimate(&best_mask, cfg.samples, cfg.eval_seed)?;
    Ok(ExplanationResult {
        l1_normalized: best_mask.normalized_l1(),
        mask: best_mask,
        hard_mask: None,
        trace,
        distortion,
        selection_order: vec![],
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}

/// Adam on Bernoulli parameters θ for `E_{s∼Concrete(θ,t)} D + λ‖θ‖₁`,
/// starting from θ = 1/2. The returned mask is θ; the hard mask is θ > 1/2.
pub fn solve_bernoulli(problem: &ProblemSet, cfg: &SolverConfig) -> Result<ExplanationResult> {
    check_kind(cfg, SolverKind::Bernoulli)?;
    let k = problem.num_blocks();
    cfg.validate(k)?;
    let start = Instant::now();
    let n = cfg.samples;
    let t = cfg.temperature;

    let draw = |theta: &[f64], seed: u64| -> (Vec<Mask>, Vec<Vec<f64>>) {
        (0..n)
            .map(|i| {
                // stream offset keeps mask noise apart from perturbation draws
                let mut rng = substream(seed, (1u64 << 40) + i as u64);
                let s = concrete_from_noise(theta, t, &logistic_noise(&mut rng, k));
                (Mask::clamped(s.clone()), s)
            })
            .unzip()
    };
    let evaluate = |theta: &[f64]| -> Result<f64> {
        let (masks, _) = draw(theta, cfg.eval_seed);
        Ok(problem.estimate_masks(&masks, cfg.eval_seed)?.mean + cfg.lambda * theta.iter().sum::<f64>())
    };

    let mut theta = vec![0.5; k];
    let mut best_theta = theta.clone();
    let mut best = evaluate(&theta)?;
    let mut adam = Adam::new(k, cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    let interval = cfg.eval_interval();
    for step in 0..cfg.steps {
        let seed = derive_seed(cfg.seed, step as u64);
        let (masks, raw) = draw(&theta, seed);
        let (d, grads) = problem.estimate_with_gradient(&masks, seed)?;
        let objective = d + cfg.lambda * theta.iter().sum::<f64>();
        if !objective.is_finite() {
            return Err(RdeError::NonFiniteObjective { step });
        }
        trace.push(objective);
        let mut g = vec![cfg.lambda; k];
        for (gs, s) in grads.iter().zip(&raw) {
            for i in 0..k {
                let th = theta[i].clamp(THETA_MIN, 1.0 - THETA_MIN);
                let ds = s[i] * (1.0 - s[i]) / (t * th * (1.0 - th));
                g[i] += gs[i] * ds / n as f64;
            }
        }
        adam.step(&mut theta, &g)?;
        theta.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if (step + 1) % interval == 0 || step + 1 == cfg.steps {
            let value = evaluate(&theta)?;
            if value < best {
                best = value;
                best_theta = theta.clone();
            }
        }
    }
    let mask = Mask::clamped(best_theta);
    let hard = mask.thresholded(0.5);
    let distortion = problem.estimate(&hard, cfg.samples, cfg.eval_seed)?;
    Ok(ExplanationResult {
        l1_normalized: mask.normalized_l1(),
        mask,
        hard_mask: Some(hard),
        trace,
        distortion,
        selection_order: vec![],
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: cfg.clone(),
    })
}
