//! Obfuscation, Monte-Carlo expected distortion and the ℓ1-relaxed objective.
//!
//! Sample `i` of an estimate always draws from the substream
//! `(seed, i)`, so sequential and concurrent evaluation agree bit for bit.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortions::Distortion;
use crate::error::{invalid, RdeError, Result};
use crate::obfuscations::Perturbation;
use crate::representations::Representation;
use crate::types::{CoefficientVector, Mask, Signal};

/// A differentiable model `Φ : ℝⁿ → ℝᵐ`.
pub trait Model: Send + Sync {
    fn output_dim(&self) -> usize;

    fn forward(&self, x: &Signal) -> Result<Vec<f64>>;

    /// `Jᵀ · cotangent` at `x`.
    fn input_gradient(&self, x: &Signal, cotangent: &[f64]) -> Result<Vec<f64>>;

    /// Output at `x` and the input gradient for a cotangent computed from
    /// that output. Implementations may share the forward pass.
    fn forward_and_gradient(
        &self,
        x: &Signal,
        cotangent: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.forward(x)?;
        let g = cotangent(&out)?;
        let grad = self.input_gradient(x, &g)?;
        Ok((out, grad))
    }
}

/// Independent generator for sample `stream` of a run seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Child seed for a numbered sub-run (solver step, sweep point, image).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    substream(seed ^ 0x9E37_79B9_7F4A_7C15, tag).next_u64()
}

fn mix_coefficients(h: &CoefficientVector, s: &Mask, v: &CoefficientVector) -> Result<CoefficientVector> {
    h.check_matches(v)?;
    if s.len() != h.num_blocks() {
        return Err(RdeError::BlockMismatch {
            block: s.len().min(h.num_blocks()),
            expected: h.num_blocks(),
            found: s.len(),
        });
    }
    let mut out = h.clone();
    for (b, &si) in s.values().iter().enumerate() {
        let vb = v.block(b);
        for (o, &vv) in out.block_mut(b).iter_mut().zip(vb) {
            *o = si * *o + (1.0 - si) * vv;
        }
    }
    Ok(out)
}

/// `f(s⊙h + (1−s)⊙v)`, clipped into `clip` when given.
pub fn obfuscate(
    h: &CoefficientVector,
    s: &Mask,
    v: &CoefficientVector,
    f: &dyn Representation,
    clip: Option<(f64, f64)>,
) -> Result<Signal> {
    let z = mix_coefficients(h, s, v)?;
    let y = f.synthesize(&z)?;
    Ok(match clip {
        Some((lo, hi)) => y.clipped(lo, hi),
        None => y,
    })
}

/// `distortion_mean + λ‖s‖₁`.
pub fn objective_l1(distortion_mean: f64, s: &Mask, lambda: f64) -> f64 {
    distortion_mean + lambda * s.sparsity_l1()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl DistortionEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            n_samples: n,
        }
    }
}

/// Everything needed to evaluate `D(x, s, 𝒱_s, Φ)` for one target.
#[derive(Clone)]
pub struct Problem {
    pub signal: Signal,
    pub coefficients: CoefficientVector,
    pub representation: Arc<dyn Representation>,
    pub perturbation: Arc<dyn Perturbation>,
    pub model: Arc<dyn Model>,
    pub distortion: Distortion,
    /// `Φ(x)`.
    pub reference: Vec<f64>,
    pub clip: Option<(f64, f64)>,
}

impl Problem {
    /// Builds a problem from the target signal, using the representation's
    /// analysis map for `h`.
    pub fn new(
        signal: Signal,
        representation: Arc<dyn Representation>,
        perturbation: Arc<dyn Perturbation>,
        model: Arc<dyn Model>,
        distortion: Distortion,
    ) -> Result<Self> {
        let coefficients = representation.analyze(&signal)?;
        Self::with_coefficients(signal, coefficients, representation, perturbation, model, distortion)
    }

    pub fn with_coefficients(
        signal: Signal,
        coefficients: CoefficientVector,
        representation: Arc<dyn Representation>,
        perturbation: Arc<dyn Perturbation>,
        model: Arc<dyn Model>,
        distortion: Distortion,
    ) -> Result<Self> {
        let reference = model.forward(&signal)?;
        if reference.len() != model.output_dim() {
            return Err(RdeError::Shape(format!(
                "model returned {} outputs, declared {}",
                reference.len(),
                model.output_dim()
            )));
        }
        Ok(Self {
            signal,
            coefficients,
            representation,
            perturbation,
            model,
            distortion,
            reference,
            clip: None,
        })
    }

    pub fn with_clip(mut self, lo: f64, hi: f64) -> Self {
        self.clip = Some((lo, hi));
        self
    }

    pub fn num_blocks(&self) -> usize {
        self.coefficients.num_blocks()
    }

    fn check_output(&self, out: &[f64]) -> Result<()> {
        if out.len() != self.model.output_dim() {
            return Err(RdeError::Shape(format!(
                "model returned {} outputs, expected {}",
                out.len(),
                self.model.output_dim()
            )));
        }
        Ok(())
    }

    fn draw(&self, s: &Mask, seed: u64, index: u64) -> Result<CoefficientVector> {
        let mut rng = substream(seed, index);
        self.perturbation.sample(&self.coefficients, s, &mut rng)
    }

    /// `d(Φ(x), Φ(y))` for one obfuscation drawn from substream `index`.
    pub fn sample_distortion(&self, s: &Mask, seed: u64, index: u64) -> Result<f64> {
        let v = self.draw(s, seed, index)?;
        let y = obfuscate(&self.coefficients, s, &v, self.representation.as_ref(), self.clip)?;
        let out = self.model.forward(&y)?;
        self.check_output(&out)?;
        let d = self.distortion.evaluate(&self.reference, &out)?;
        if !d.is_finite() {
            return Err(RdeError::NonFiniteDistortion { sample: index as usize });
        }
        Ok(d)
    }

    /// One sample's distortion and its gradient w.r.t. the mask, with the
    /// perturbation held fixed and pass-through gradients on clipping.
    pub fn sample_distortion_and_gradient(&self, s: &Mask, seed: u64, index: u64) -> Result<(f64, Vec<f64>)> {
        let v = self.draw(s, seed, index)?;
        let z = mix_coefficients(&self.coefficients, s, &v)?;
        let mut y = self.representation.synthesize(&z)?;
        if let Some((lo, hi)) = self.clip {
            y = y.clipped(lo, hi);
        }
        let mut value = 0.0;
        let (out, grad_y) = self.model.forward_and_gradient(&y, &mut |out: &[f64]| {
            self.check_output(out)?;
            value = self.distortion.evaluate(&self.reference, out)?;
            self.distortion.gradient(&self.reference, out)
        })?;
        drop(out);
        if !value.is_finite() {
            return Err(RdeError::NonFiniteDistortion { sample: index as usize });
        }
        let u = self.representation.synthesize_vjp(&z, &grad_y)?;
        let layout = self.coefficients.layout();
        let grad = (0..layout.num_blocks())
            .map(|b| {
                layout
                    .range(b)
                    .map(|c| u[c] * (self.coefficients.values()[c] - v.values()[c]))
                    .sum()
            })
            .collect();
        Ok((value, grad))
    }
}

/// Monte-Carlo estimate of `D(x, s, 𝒱_s, Φ)`.
pub fn expected_distortion(problem: &Problem, s: &Mask, n_samples: usize, seed: u64) -> Result<DistortionEstimate> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    if problem.perturbation.is_deterministic() {
        let d = problem.sample_distortion(s, seed, 0)?;
        return Ok(DistortionEstimate {
            mean: d,
            std_error: 0.0,
            n_samples,
        });
    }
    let values = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| problem.sample_distortion(s, seed, i))
        .collect::<Result<Vec<f64>>>()?;
    Ok(DistortionEstimate::from_samples(&values))
}

/// One or more problems sharing a block structure; the distortion is the
/// mean over members (class-level queries optimize one mask for many
/// targets).
#[derive(Clone)]
pub struct ProblemSet {
    problems: Vec<Problem>,
}

impl ProblemSet {
    pub fn new(problems: Vec<Problem>) -> Result<Self> {
        let first = problems.first().ok_or_else(|| invalid("empty problem set"))?;
        for p in &problems[1..] {
            first.coefficients.layout().check_matches(p.coefficients.layout())?;
        }
        Ok(Self { problems })
    }

    pub fn problems(&self) -> &[Problem] {
        &self.problems
    }

    pub fn num_blocks(&self) -> usize {
        self.problems[0].num_blocks()
    }

    pub fn is_deterministic(&self) -> bool {
        self.problems.iter().all(|p| p.perturbation.is_deterministic())
    }

    /// Per-sample distortions averaged over the members, sample `i` of
    /// member `p` drawing from stream `p · n_samples + i`.
    pub fn estimate(&self, s: &Mask, n_samples: usize, seed: u64) -> Result<DistortionEstimate> {
        if n_samples == 0 {
            return Err(invalid("n_samples must be at least 1"));
        }
        let n = if self.is_deterministic() { 1 } else { n_samples };
        let mut est = self.estimate_masks(&vec![s.clone(); n], seed)?;
        est.n_samples = n_samples;
        if n == 1 {
            est.std_error = 0.0;
        }
        Ok(est)
    }

    /// Distortion estimate where sample `i` uses `masks[i]`.
    pub fn estimate_masks(&self, masks: &[Mask], seed: u64) -> Result<DistortionEstimate> {
        let n = masks.len();
        if n == 0 {
            return Err(invalid("at least one mask is required"));
        }
        let per_sample = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = 0.0;
                for (p, problem) in self.problems.iter().enumerate() {
                    acc += problem.sample_distortion(&masks[i], seed, (p * n + i) as u64)?;
                }
                Ok(acc / self.problems.len() as f64)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(DistortionEstimate::from_samples(&per_sample))
    }

    /// Mean distortion and per-sample mask gradients, sample `i` using
    /// `masks[i]` and its own perturbation draw.
    pub fn estimate_with_gradient(&self, masks: &[Mask], seed: u64) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = masks.len();
        let results = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut value = 0.0;
                let mut grad = vec![0.0; self.num_blocks()];
                for (p, problem) in self.problems.iter().enumerate() {
                    let (d, g) = problem.sample_distortion_and_gradient(&masks[i], seed, (p * n + i) as u64)?;
                    value += d;
                    for (a, b) in grad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                let scale = 1.0 / self.problems.len() as f64;
                grad.iter_mut().for_each(|g| *g *= scale);
                Ok((value * scale, grad))
            })
            .collect::<Result<Vec<(f64, Vec<f64>)>>>()?;
        let mean = results.iter().map(|(d, _)| d).sum::<f64>() / n as f64;
        Ok((mean, results.into_iter().map(|(_, g)| g).collect()))
    }
}

impl From<Problem> for ProblemSet {
    fn from(p: Problem) -> Self {
        Self { problems: vec![p] }
    }
}
