//! Magnitude/phase parameterizations of the 1D discrete Fourier transform.
//!
//! Conventions (0-based): `c_j = Σ_l x_l e^{-i2πlj/n}` and
//! `x_l = Re (1/n) Σ_j m_j e^{iω_j} e^{i2πlj/n}` with `c_j = m_j e^{iω_j}`.

use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{check_coefficients, check_cotangent, check_signal, Representation};
use crate::error::{invalid, RdeError, Result};
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

#[derive(Clone)]
struct DftPlan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl DftPlan {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Returns `(magnitudes, phases)` of the spectrum of a real signal.
    fn polar_spectrum(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = x.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        let mut mags = Vec::with_capacity(self.n);
        let mut phases = Vec::with_capacity(self.n);
        for c in buf {
            let m = c.norm();
            mags.push(m);
            phases.push(if m <= 1e-13 * scale { 0.0 } else { wrap_phase(c.arg()) });
        }
        (mags, phases)
    }

    /// `(1/n) Σ_j c_j e^{i2πlj/n}` for `c_j = m_j e^{iω_j}`.
    fn complex_inverse(&self, mags: &[f64], phases: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = mags
            .iter()
            .zip(phases)
            .map(|(&m, &w)| Complex64::from_polar(m, w))
            .collect();
        self.inverse.process(&mut buf);
        let inv_n = 1.0 / self.n as f64;
        for c in &mut buf {
            *c *= inv_n;
        }
        buf
    }

    /// Gradients of `Σ_l g_l x_l` w.r.t. magnitudes and phases.
    fn polar_vjp(&self, mags: &[f64], phases: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        // G_j = Σ_l g_l e^{i2πlj/n}
        let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.inverse.process(&mut buf);
        let inv_n = 1.0 / self.n as f64;
        let mut dm = Vec::with_capacity(self.n);
        let mut dw = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let rotated = Complex64::from_polar(1.0, phases[j]) * buf[j];
            dm.push(rotated.re * inv_n);
            dw.push(-mags[j] * rotated.im * inv_n);
        }
        (dm, dw)
    }
}

fn wrap_phase(w: f64) -> f64 {
    let r = w.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Output of [`dft_inverse`]: the real reconstruction plus the largest
/// imaginary residual that was discarded.
#[derive(Clone, Debug)]
pub struct InverseDft {
    pub signal: Signal,
    pub imag_residual: f64,
}

/// Per-frequency `(m_j, ω_j)` blocks of a 1D signal.
pub fn dft_forward(x: &Signal) -> Result<CoefficientVector> {
    if x.is_empty() {
        return Err(invalid("DFT of an empty signal"));
    }
    FourierPerFrequency::new(x.len())?.analyze_any(x.values())
}

/// Real part of the inverse DFT of `(m_j, ω_j)` blocks.
pub fn dft_inverse(h: &CoefficientVector) -> Result<InverseDft> {
    let n = h.num_blocks();
    if let Some(b) = (0..n).find(|&b| h.block(b).len() != 2) {
        return Err(RdeError::BlockMismatch {
            block: b,
            expected: 2,
            found: h.block(b).len(),
        });
    }
    let plan = DftPlan::new(n);
    let (mags, phases) = split_pairs(h.values());
    let z = plan.complex_inverse(&mags, &phases);
    let imag_residual = z.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let signal = Signal::vector(z.into_iter().map(|c| c.re).collect())?;
    Ok(InverseDft {
        signal,
        imag_residual,
    })
}

fn split_pairs(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    values.chunks_exact(2).map(|p| (p[0], p[1])).unzip()
}

/// `k = n` blocks, block `j` = `(m_j, ω_j)`.
#[derive(Clone)]
pub struct FourierPerFrequency {
    plan: DftPlan,
    shape: Shape,
    layout: Arc<BlockLayout>,
}

impl FourierPerFrequency {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("Fourier representation needs n >= 1"));
        }
        Ok(Self {
            plan: DftPlan::new(n),
            shape: Shape::Vector(n),
            layout: Arc::new(BlockLayout::uniform(n, 2)?),
        })
    }

    fn analyze_any(&self, x: &[f64]) -> Result<CoefficientVector> {
        let (m, w) = self.plan.polar_spectrum(x);
        let values = m.into_iter().zip(w).flat_map(|(a, b)| [a, b]).collect();
        CoefficientVector::from_flat(self.layout.clone(), values)
    }
}

impl Representation for FourierPerFrequency {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        let (m, w) = split_pairs(h.values());
        let z = self.plan.complex_inverse(&m, &w);
        Signal::vector(z.into_iter().map(|c| c.re).collect())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        self.analyze_any(x.values())
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        let (m, w) = split_pairs(h.values());
        let (dm, dw) = self.plan.polar_vjp(&m, &w, cotangent);
        Ok(dm.into_iter().zip(dw).flat_map(|(a, b)| [a, b]).collect())
    }
}

/// `k = 2` blocks: the whole magnitude spectrum and the whole phase spectrum.
#[derive(Clone)]
pub struct FourierSplit {
    plan: DftPlan,
    shape: Shape,
    layout: Arc<BlockLayout>,
}

impl FourierSplit {
    pub const MAGNITUDE: usize = 0;
    pub const PHASE: usize = 1;

    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("Fourier representation needs n >= 1"));
        }
        Ok(Self {
            plan: DftPlan::new(n),
            shape: Shape::Vector(n),
            layout: Arc::new(BlockLayout::uniform(2, n)?),
        })
    }
}

impl Representation for FourierSplit {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        let z = self.plan.complex_inverse(h.block(0), h.block(1));
        Signal::vector(z.into_iter().map(|c| c.re).collect())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        let (mut m, w) = self.plan.polar_spectrum(x.values());
        m.extend(w);
        CoefficientVector::from_flat(self.layout.clone(), m)
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        let (mut dm, dw) = self.plan.polar_vjp(h.block(0), h.block(1), cotangent);
        dm.extend(dw);
        Ok(dm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // O(n²) reference sums.
    fn naive_dft(x: &[f64]) -> Vec<(f64, f64)> {
        let n = x.len();
        (0..n)
            .map(|j| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (l, &v)| {
                    let a = -TAU * (l * j) as f64 / n as f64;
                    (re + v * a.cos(), im + v * a.sin())
                })
            })
            .collect()
    }

    fn naive_inverse(c: &[(f64, f64)]) -> Vec<(f64, f64)> {
        let n = c.len();
        (0..n)
            .map(|l| {
                let (re, im) = c.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &(a, b))| {
                    let t = TAU * (l * j) as f64 / n as f64;
                    (re + a * t.cos() - b * t.sin(), im + a * t.sin() + b * t.cos())
                });
                (re / n as f64, im / n as f64)
            })
            .collect()
    }

    fn random_signal(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dc_only_signal() {
        let h = dft_forward(&Signal::vector(vec![1.0; 4]).unwrap()).unwrap();
        let mags: Vec<f64> = (0..4).map(|j| h.block(j)[0]).collect();
        for (m, e) in mags.iter().zip([4.0, 0.0, 0.0, 0.0]) {
            assert!((m - e).abs() < 1e-12);
        }
        assert_eq!(h.block(0)[1], 0.0);
        for j in 0..4 {
            let w = h.block(j)[1];
            assert!((0.0..TAU).contains(&w));
        }
    }

    #[test]
    fn zero_signal_has_zero_spectrum() {
        let h = dft_forward(&Signal::vector(vec![0.0; 6]).unwrap()).unwrap();
        assert!((0..6).all(|j| h.block(j) == [0.0, 0.0]));
    }

    #[test]
    fn forward_matches_direct_sum() {
        let x = random_signal(16, 1);
        let h = dft_forward(&Signal::vector(x.clone()).unwrap()).unwrap();
        for (j, (re, im)) in naive_dft(&x).into_iter().enumerate() {
            let (m, w) = (h.block(j)[0], h.block(j)[1]);
            assert!((m * w.cos() - re).abs() < 1e-10);
            assert!((m * w.sin() - im).abs() < 1e-10);
        }
        let back = dft_inverse(&h).unwrap();
        assert!(back.imag_residual < 1e-8);
        for (a, b) in back.signal.values().iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dc_inversion_and_zero() {
        let mut blocks = vec![vec![0.0, 0.0]; 5];
        blocks[0][0] = 5.0;
        let out = dft_inverse(&CoefficientVector::from_blocks(blocks).unwrap()).unwrap();
        assert!(out.signal.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let zero = dft_inverse(&CoefficientVector::from_blocks(vec![vec![0.0, 0.0]; 3]).unwrap())
            .unwrap();
        assert!(zero.signal.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conjugate_symmetric_spectrum_inverts_to_real_signal() {
        let n = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut c: Vec<(f64, f64)> = vec![(0.0, 0.0); n];
        c[0] = (rng.random_range(0.0..2.0), 0.0);
        c[n / 2] = (rng.random_range(-2.0..2.0), 0.0);
        for j in 1..n / 2 {
            let z = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            c[j] = z;
            c[n - j] = (z.0, -z.1);
        }
        let blocks = c
            .iter()
            .map(|&(re, im)| {
                let m = (re * re + im * im).sqrt();
                vec![m, wrap_phase(im.atan2(re))]
            })
            .collect();
        let out = dft_inverse(&CoefficientVector::from_blocks(blocks).unwrap()).unwrap();
        let oracle = naive_inverse(&c);
        assert!(out.imag_residual < 1e-8);
        for (a, (re, im)) in out.signal.values().iter().zip(oracle) {
            assert!(im.abs() < 1e-10);
            assert!((a - re).abs() < 1e-10);
        }
    }

    #[test]
    fn split_identity_and_zero_phase() {
        let x = random_signal(12, 4);
        let sig = Signal::vector(x.clone()).unwrap();
        let split = FourierSplit::new(12).unwrap();
        let h = split.analyze(&sig).unwrap();
        let y = split.synthesize(&h).unwrap();
        for (a, b) in y.values().iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }

        let mut zero_phase = h.clone();
        zero_phase.block_mut(1).fill(0.0);
        let y0 = split.synthesize(&zero_phase).unwrap();
        let c: Vec<(f64, f64)> = h.block(0).iter().map(|&m| (m, 0.0)).collect();
        for (a, (re, _)) in y0.values().iter().zip(naive_inverse(&c)) {
            assert!((a - re).abs() < 1e-10);
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let n = 7;
        let rep = FourierPerFrequency::new(n).unwrap();
        let h = rep.analyze(&Signal::vector(random_signal(n, 2)).unwrap()).unwrap();
        let g = random_signal(n, 3);
        let u = rep.synthesize_vjp(&h, &g).unwrap();
        let f = |vals: &[f64]| -> f64 {
            let hh = CoefficientVector::from_flat(h.layout().clone(), vals.to_vec()).unwrap();
            let y = rep.synthesize(&hh).unwrap();
            y.values().iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..h.values().len() {
            let mut p = h.values().to_vec();
            let mut m = h.values().to_vec();
            p[i] += eps;
            m[i] -= eps;
            let fd = (f(&p) - f(&m)) / (2.0 * eps);
            assert!((fd - u[i]).abs() < 1e-7, "entry {i}: {fd} vs {}", u[i]);
        }
    }
}
