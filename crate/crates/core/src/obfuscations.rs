//! Perturbation distributions `𝒱_s` used to fill masked-out blocks.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RdeError, Result};
use crate::representations::{BlockLabel, Representation, Subband};
use crate::types::{CoefficientVector, Mask, Shape, Signal};

/// A distribution over coefficient vectors, possibly depending on the mask.
pub trait Perturbation: Send + Sync {
    fn sample(&self, h: &CoefficientVector, s: &Mask, rng: &mut ChaCha8Rng) -> Result<CoefficientVector>;

    /// True when every draw is identical; lets estimators skip redundant samples.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Every block filled with `c`.
pub fn sample_constant(h: &CoefficientVector, _s: &Mask, c: f64) -> CoefficientVector {
    CoefficientVector::filled(h.layout().clone(), c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantPerturbation {
    pub value: f64,
}

impl Perturbation for ConstantPerturbation {
    fn sample(&self, h: &CoefficientVector, s: &Mask, _rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        Ok(sample_constant(h, s, self.value))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// How coordinates are grouped for Gaussian statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Global,
    /// Group id per block.
    PerBlockGroup(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaussianStats {
    /// Mean and std of the target's own coefficients in each group.
    Adaptive,
    /// `(μ, σ)` per group id, in ascending group order.
    Fixed(Vec<(f64, f64)>),
}

/// Diagonal Gaussian noise `𝒩(μ_g, σ_g² Id)` per coordinate group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub grouping: Grouping,
    pub stats: GaussianStats,
}

impl GaussianSpec {
    pub fn adaptive_global() -> Self {
        Self {
            grouping: Grouping::Global,
            stats: GaussianStats::Adaptive,
        }
    }

    pub fn fixed_global(mean: f64, std: f64) -> Result<Self> {
        if !(std >= 0.0) {
            return Err(invalid(format!("negative standard deviation {std}")));
        }
        Ok(Self {
            grouping: Grouping::Global,
            stats: GaussianStats::Fixed(vec![(mean, std)]),
        })
    }

    /// One group per wavelet scale; approximation coefficients form their
    /// own group separate from the detail bands of the coarsest scale.
    pub fn adaptive_per_scale(labels: Option<&[BlockLabel]>) -> Result<Self> {
        let labels = labels.ok_or_else(|| invalid("per-scale Gaussian noise needs scale labels"))?;
        let mut ids: BTreeMap<(usize, bool), usize> = BTreeMap::new();
        let groups = labels
            .iter()
            .map(|l| {
                let key = (l.scale, l.subband == Subband::Approx);
                let next = ids.len();
                *ids.entry(key).or_insert(next)
            })
            .collect();
        Ok(Self {
            grouping: Grouping::PerBlockGroup(groups),
            stats: GaussianStats::Adaptive,
        })
    }
}

/// Mean and population standard deviation of each coordinate group.
pub fn group_statistics(h: &CoefficientVector, grouping: &Grouping) -> Result<Vec<(f64, f64)>> {
    let groups = group_ids(h, grouping)?;
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut sum = vec![0.0; n_groups];
    let mut sum_sq = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for b in 0..h.num_blocks() {
        let g = groups[b];
        for &v in h.block(b) {
            sum[g] += v;
            count[g] += 1;
        }
    }
    let means: Vec<f64> = (0..n_groups)
        .map(|g| if count[g] > 0 { sum[g] / count[g] as f64 } else { 0.0 })
        .collect();
    for b in 0..h.num_blocks() {
        let g = groups[b];
        for &v in h.block(b) {
            sum_sq[g] += (v - means[g]).powi(2);
        }
    }
    Ok((0..n_groups)
        .map(|g| {
            let var = if count[g] > 0 { sum_sq[g] / count[g] as f64 } else { 0.0 };
            (means[g], var.sqrt())
        })
        .collect())
}

fn group_ids(h: &CoefficientVector, grouping: &Grouping) -> Result<Vec<usize>> {
    match grouping {
        Grouping::Global => Ok(vec![0; h.num_blocks()]),
        Grouping::PerBlockGroup(ids) => {
            if ids.len() != h.num_blocks() {
                return Err(RdeError::BlockCount {
                    expected: h.num_blocks(),
                    found: ids.len(),
                });
            }
            Ok(ids.clone())
        }
    }
}

/// Draws `v_c ~ 𝒩(μ_g, σ_g²)` independently per coordinate.
pub fn sample_gaussian(
    h: &CoefficientVector,
    _s: &Mask,
    spec: &GaussianSpec,
    rng: &mut ChaCha8Rng,
) -> Result<CoefficientVector> {
    let groups = group_ids(h, &spec.grouping)?;
    let stats = match &spec.stats {
        GaussianStats::Adaptive => group_statistics(h, &spec.grouping)?,
        GaussianStats::Fixed(s) => s.clone(),
    };
    let mut out = CoefficientVector::filled(h.layout().clone(), 0.0);
    for b in 0..h.num_blocks() {
        let (mean, std) = *stats
            .get(groups[b])
            .ok_or_else(|| invalid(format!("no Gaussian statistics for group {}", groups[b])))?;
        for v in out.block_mut(b) {
            let z: f64 = StandardNormal.sample(rng);
            *v = mean + std * z;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct GaussianPerturbation {
    pub spec: GaussianSpec,
}

impl Perturbation for GaussianPerturbation {
    fn sample(&self, h: &CoefficientVector, s: &Mask, rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        sample_gaussian(h, s, &self.spec, rng)
    }
}

/// Odd-sided 2D stencil whose entries sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    side: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    pub fn new(side: usize, weights: Vec<f64>) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(invalid(format!("blur kernel side {side} must be odd")));
        }
        if weights.len() != side * side {
            return Err(invalid("blur kernel weight count does not match its side"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("blur kernel sums to {total}, expected 1")));
        }
        Ok(Self { side, weights })
    }

    pub fn box_filter(side: usize) -> Result<Self> {
        let n = side * side;
        Self::new(side, vec![1.0 / n as f64; n])
    }

    pub fn gaussian(side: usize, sigma: f64) -> Result<Self> {
        if side.is_multiple_of(2) {
            return Err(invalid(format!("blur kernel side {side} must be odd")));
        }
        let r = (side / 2) as f64;
        let mut w: Vec<f64> = (0..side * side)
            .map(|i| {
                let dy = (i / side) as f64 - r;
                let dx = (i % side) as f64 - r;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        Self::new(side, w)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Same-size convolution `K * x` of every channel with reflect padding.
pub fn blur_image(x: &Signal, kernel: &BlurKernel) -> Result<Signal> {
    let Shape::Image {
        height,
        width,
        channels,
    } = *x.shape()
    else {
        return Err(invalid("blur needs an image signal"));
    };
    let r = (kernel.side / 2) as isize;
    let plane = height * width;
    let src = x.values();
    let mut out = vec![0.0; src.len()];
    for c in 0..channels {
        let base = c * plane;
        for row in 0..height {
            for col in 0..width {
                let mut acc = 0.0;
                for ky in 0..kernel.side {
                    let rr = reflect(row as isize + ky as isize - r, height);
                    for kx in 0..kernel.side {
                        let cc = reflect(col as isize + kx as isize - r, width);
                        acc += kernel.weights[ky * kernel.side + kx] * src[base + rr * width + cc];
                    }
                }
                out[base + row * width + col] = acc;
            }
        }
    }
    Signal::new(out, x.shape().clone())
}

/// The blurred image expressed in `representation`'s block structure.
pub fn sample_blur(
    x: &Signal,
    kernel: &BlurKernel,
    representation: &dyn Representation,
) -> Result<CoefficientVector> {
    representation.analyze(&blur_image(x, kernel)?)
}

/// Fixed perturbation precomputed once (blur, or any other deterministic fill).
#[derive(Clone, Debug)]
pub struct FixedPerturbation {
    pub values: CoefficientVector,
}

impl Perturbation for FixedPerturbation {
    fn sample(&self, h: &CoefficientVector, _s: &Mask, _rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        h.check_matches(&self.values)?;
        Ok(self.values.clone())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Conditional generator `G(h, s, z)` producing replacement coefficients.
pub trait Inpainter: Send + Sync {
    fn generate(&self, h: &CoefficientVector, s: &Mask, seed: u64) -> Result<CoefficientVector>;
}

/// Linear interpolation between kept neighbours plus small Gaussian noise.
///
/// Blocks with `s_i ≥ 0.5` are kept. Masked runs are interpolated
/// coordinate-wise from the nearest kept block on each side, extended
/// constantly past the outermost kept blocks. With nothing kept, every
/// block takes the value of the first block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaselineInpainter {
    /// Noise std as a fraction of the std of `h`'s entries.
    pub noise_fraction: f64,
}

impl Default for BaselineInpainter {
    fn default() -> Self {
        Self { noise_fraction: 0.05 }
    }
}

pub fn baseline_inpaint(h: &CoefficientVector, s: &Mask, seed: u64, noise_fraction: f64) -> Result<CoefficientVector> {
    let k = h.num_blocks();
    if s.len() != k {
        return Err(RdeError::BlockCount {
            expected: k,
            found: s.len(),
        });
    }
    let kept: Vec<bool> = s.values().iter().map(|&v| v >= 0.5).collect();
    let mut out = h.clone();
    let max_dim = (0..k).map(|b| h.block(b).len()).max().unwrap_or(0);
    for c in 0..max_dim {
        let positions: Vec<usize> = (0..k).filter(|&b| h.block(b).len() > c).collect();
        let anchors: Vec<usize> = positions.iter().copied().filter(|&b| kept[b]).collect();
        for (slot, &b) in positions.iter().enumerate() {
            if kept[b] {
                continue;
            }
            let value = if anchors.is_empty() {
                h.block(positions[0])[c]
            } else {
                let right = anchors.partition_point(|&a| a < b);
                match (right.checked_sub(1).map(|i| anchors[i]), anchors.get(right)) {
                    (Some(lo), Some(&hi)) => {
                        let t = (slot - slot_of(&positions, lo)) as f64
                            / (slot_of(&positions, hi) - slot_of(&positions, lo)) as f64;
                        (1.0 - t) * h.block(lo)[c] + t * h.block(hi)[c]
                    }
                    (Some(lo), None) => h.block(lo)[c],
                    (None, Some(&hi)) => h.block(hi)[c],
                    (None, None) => unreachable!(),
                }
            };
            out.block_mut(b)[c] = value;
        }
    }
    if noise_fraction > 0.0 {
        let (_, std) = group_statistics(h, &Grouping::Global)?[0];
        let sigma = noise_fraction * std;
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for b in (0..k).filter(|&b| !kept[b]) {
                for v in out.block_mut(b) {
                    *v += normal.sample(&mut rng);
                }
            }
        }
    }
    Ok(out)
}

fn slot_of(positions: &[usize], block: usize) -> usize {
    positions.binary_search(&block).expect("anchor is a position")
}

impl Inpainter for BaselineInpainter {
    fn generate(&self, h: &CoefficientVector, s: &Mask, seed: u64) -> Result<CoefficientVector> {
        baseline_inpaint(h, s, seed, self.noise_fraction)
    }
}

/// `v = G(h, s, z)` with a fresh latent seed per draw.
#[derive(Clone)]
pub struct InpaintingPerturbation {
    pub inpainter: Arc<dyn Inpainter>,
}

impl Perturbation for InpaintingPerturbation {
    fn sample(&self, h: &CoefficientVector, s: &Mask, rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        let z = rng.next_u64();
        self.inpainter.generate(h, s, z)
    }
}

/// Replacement coefficients taken from the representation of a white-noise
/// signal whose std matches the target signal. Used to scramble whole
/// spectra (e.g. all phases) in the magnitude/phase query.
pub struct NoiseSignalPerturbation {
    pub representation: Arc<dyn Representation>,
}

impl Perturbation for NoiseSignalPerturbation {
    fn sample(&self, h: &CoefficientVector, _s: &Mask, rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        let x = self.representation.synthesize(h)?;
        let n = x.len() as f64;
        let mean = x.values().iter().sum::<f64>() / n;
        let std = (x.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let noise: Vec<f64> = (0..x.len())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.representation
            .analyze(&Signal::new(noise, x.shape().clone())?)
    }
}
