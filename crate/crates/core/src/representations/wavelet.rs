//! Separable multi-level 2D discrete wavelet transform with zero padding.
//!
//! Analysis keeps every coefficient whose filter support overlaps the
//! signal, so a level maps length `N` to `⌊(N−1)/2⌋ + L/2` coefficients per
//! band. With orthonormal filters the analysis operator is then an exact
//! isometry and synthesis (followed by truncation to the original extent)
//! is both its left inverse and its adjoint.

#![allow(clippy::excessive_precision)]

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_coefficients, check_cotangent, check_signal, BlockLabel, Representation};
use crate::error::{invalid, Result};
use crate::types::{BlockLayout, CoefficientVector, Shape, Signal};

// Daubechies scaling filters (sum √2), orders 1..=6.
const DB1: [f64; 2] = [FRAC_1_SQRT_2, FRAC_1_SQRT_2];
const DB2: [f64; 4] = [
    0.48296291314453414337,
    0.83651630373780790558,
    0.22414386804201338103,
    -0.12940952255126038117,
];
const DB3: [f64; 6] = [
    0.332670552950082616,
    0.80689150931109257649,
    0.4598775021184915701,
    -0.1350110200102545887,
    -0.085441273882026661693,
    0.035226291885709536603,
];
const DB4: [f64; 8] = [
    0.23037781330889650086,
    0.71484657055291564709,
    0.63088076792985890788,
    -0.027983769416859854211,
    -0.18703481171909308408,
    0.030841381835560763627,
    0.032883011666885199735,
    -0.010597401785069032105,
];
const DB5: [f64; 10] = [
    0.16010239797419291448,
    0.60382926979718967054,
    0.72430852843777292773,
    0.13842814590132073151,
    -0.24229488706638203186,
    -0.032244869584638374648,
    0.077571493840045713523,
    -0.0062414902127982742742,
    -0.012580751999081999469,
    0.003335725285473771278,
];
const DB6: [f64; 12] = [
    0.11154074335010946362,
    0.49462389039845308568,
    0.75113390802109535068,
    0.31525035170919762909,
    -0.22626469396543982008,
    -0.12976686756726193556,
    0.097501605587323049102,
    0.027522865530305728626,
    -0.031582039317486029565,
    0.00055384220116149613925,
    0.0047772575109455106396,
    -0.0010773010853084795649,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    /// Daubechies with `p` vanishing moments; `p = 1` is Haar.
    Daubechies(usize),
}

impl WaveletFamily {
    pub fn scaling_filter(&self) -> Result<&'static [f64]> {
        match self {
            WaveletFamily::Daubechies(1) => Ok(&DB1),
            WaveletFamily::Daubechies(2) => Ok(&DB2),
            WaveletFamily::Daubechies(3) => Ok(&DB3),
            WaveletFamily::Daubechies(4) => Ok(&DB4),
            WaveletFamily::Daubechies(5) => Ok(&DB5),
            WaveletFamily::Daubechies(6) => Ok(&DB6),
            WaveletFamily::Daubechies(p) => Err(invalid(format!(
                "Daubechies order {p} not supported (1..=6)"
            ))),
        }
    }

    /// Quadrature mirror `h[n] = (−1)^n g[L−1−n]`.
    pub fn wavelet_filter(&self) -> Result<Vec<f64>> {
        let g = self.scaling_filter()?;
        let l = g.len();
        Ok((0..l)
            .map(|n| if n % 2 == 0 { g[l - 1 - n] } else { -g[l - 1 - n] })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub levels: usize,
}

impl WaveletSpec {
    pub fn daubechies(order: usize, levels: usize) -> Self {
        Self {
            family: WaveletFamily::Daubechies(order),
            levels,
        }
    }

    /// Largest admissible level count for an image side.
    pub fn max_levels(min_side: usize) -> usize {
        if min_side < 2 {
            0
        } else {
            min_side.ilog2() as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subband {
    Approx,
    Horizontal,
    Vertical,
    Diagonal,
}

#[derive(Clone, Copy, Debug)]
struct Level {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn band_len(n: usize, filter_len: usize) -> usize {
    (n - 1) / 2 + filter_len / 2
}

/// One analysis step along a line: `a_k = Σ_i g[i] x[2k + i]` for
/// `k ≥ 1 − L/2`, skipping out-of-range (zero) samples.
fn analyze_line(x: &[f64], lo: &[f64], hi: &[f64], a: &mut [f64], d: &mut [f64]) {
    let n = x.len() as isize;
    let l = lo.len() as isize;
    let k0 = 1 - l / 2;
    for (idx, (ak, dk)) in a.iter_mut().zip(d.iter_mut()).enumerate() {
        let start = 2 * (k0 + idx as isize);
        let (mut sa, mut sd) = (0.0, 0.0);
        let i_begin = (-start).max(0);
        let i_end = (n - start).min(l);
        for i in i_begin..i_end {
            let v = x[(start + i) as usize];
            sa += lo[i as usize] * v;
            sd += hi[i as usize] * v;
        }
        *ak = sa;
        *dk = sd;
    }
}

/// Adjoint of [`analyze_line`], truncated to `out.len()` samples.
fn synthesize_line(a: &[f64], d: &[f64], lo: &[f64], hi: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    let n = out.len() as isize;
    let l = lo.len() as isize;
    let k0 = 1 - l / 2;
    for (idx, (&ak, &dk)) in a.iter().zip(d).enumerate() {
        let start = 2 * (k0 + idx as isize);
        let i_begin = (-start).max(0);
        let i_end = (n - start).min(l);
        for i in i_begin..i_end {
            out[(start + i) as usize] += lo[i as usize] * ak + hi[i as usize] * dk;
        }
    }
}

/// Multi-level wavelet system for `H × W × C` images; one block per
/// coefficient position holding the `C` channel values.
#[derive(Clone, Debug)]
pub struct WaveletRepresentation {
    spec: WaveletSpec,
    shape: Shape,
    height: usize,
    width: usize,
    channels: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    levels: Vec<Level>,
    layout: Arc<BlockLayout>,
    labels: Vec<BlockLabel>,
    positions: usize,
}

impl WaveletRepresentation {
    pub fn new(shape: Shape, spec: WaveletSpec) -> Result<Self> {
        let Shape::Image {
            height,
            width,
            channels,
        } = shape
        else {
            return Err(invalid("wavelet representation needs an image shape"));
        };
        let max = WaveletSpec::max_levels(height.min(width));
        if spec.levels == 0 || spec.levels > max {
            return Err(invalid(format!(
                "{} levels requested but a {height}x{width} image admits at most {max}",
                spec.levels
            )));
        }
        let lo = spec.family.scaling_filter()?.to_vec();
        let hi = spec.family.wavelet_filter()?;

        let mut levels = Vec::with_capacity(spec.levels);
        let (mut h, mut w) = (height, width);
        for _ in 0..spec.levels {
            let lvl = Level {
                in_h: h,
                in_w: w,
                out_h: band_len(h, lo.len()),
                out_w: band_len(w, lo.len()),
            };
            levels.push(lvl);
            h = lvl.out_h;
            w = lvl.out_w;
        }

        // [approx_J, (H, V, D)_J, …, (H, V, D)_1]
        let mut labels = Vec::new();
        let coarsest = levels[spec.levels - 1];
        let approx = coarsest.out_h * coarsest.out_w;
        labels.extend(std::iter::repeat_n(
            BlockLabel {
                scale: spec.levels,
                subband: Subband::Approx,
            },
            approx,
        ));
        for j in (1..=spec.levels).rev() {
            let lvl = levels[j - 1];
            for subband in [Subband::Horizontal, Subband::Vertical, Subband::Diagonal] {
                labels.extend(std::iter::repeat_n(BlockLabel { scale: j, subband }, lvl.out_h * lvl.out_w));
            }
        }
        let positions = labels.len();
        Ok(Self {
            spec,
            shape,
            height,
            width,
            channels,
            lo,
            hi,
            levels,
            layout: Arc::new(BlockLayout::uniform(positions, channels)?),
            labels,
            positions,
        })
    }

    pub fn spec(&self) -> &WaveletSpec {
        &self.spec
    }

    /// Forward transform of one channel plane into position order.
    fn analyze_plane(&self, plane: &[f64]) -> Vec<f64> {
        let mut bands: Vec<Vec<f64>> = Vec::with_capacity(3 * self.levels.len() + 1);
        let mut current = plane.to_vec();
        for lvl in &self.levels {
            let (ih, iw, oh, ow) = (lvl.in_h, lvl.in_w, lvl.out_h, lvl.out_w);
            // rows
            let mut row_lo = vec![0.0; ih * ow];
            let mut row_hi = vec![0.0; ih * ow];
            for r in 0..ih {
                analyze_line(
                    &current[r * iw..(r + 1) * iw],
                    &self.lo,
                    &self.hi,
                    &mut row_lo[r * ow..(r + 1) * ow],
                    &mut row_hi[r * ow..(r + 1) * ow],
                );
            }
            // columns
            let mut ll = vec![0.0; oh * ow];
            let mut lh = vec![0.0; oh * ow];
            let mut hl = vec![0.0; oh * ow];
            let mut hh = vec![0.0; oh * ow];
            let mut col = vec![0.0; ih];
            let mut ca = vec![0.0; oh];
            let mut cd = vec![0.0; oh];
            for (src, dst_a, dst_d) in [(&row_lo, &mut ll, &mut lh), (&row_hi, &mut hl, &mut hh)] {
                for c in 0..ow {
                    for r in 0..ih {
                        col[r] = src[r * ow + c];
                    }
                    analyze_line(&col, &self.lo, &self.hi, &mut ca, &mut cd);
                    for r in 0..oh {
                        dst_a[r * ow + c] = ca[r];
                        dst_d[r * ow + c] = cd[r];
                    }
                }
            }
            // lh: lowpass along width, highpass along height -> horizontal edges
            bands.push(lh);
            bands.push(hl);
            bands.push(hh);
            current = ll;
        }
        let mut out = current;
        for lvl in (0..self.levels.len()).rev() {
            for b in 0..3 {
                out.extend_from_slice(&bands[3 * lvl + b]);
            }
        }
        out
    }

    /// Inverse of [`Self::analyze_plane`].
    fn synthesize_plane(&self, coeffs: &[f64]) -> Vec<f64> {
        let coarsest = self.levels[self.levels.len() - 1];
        let mut offset = coarsest.out_h * coarsest.out_w;
        let mut current = coeffs[..offset].to_vec();
        for lvl in self.levels.iter().rev() {
            let size = lvl.out_h * lvl.out_w;
            let lh = &coeffs[offset..offset + size];
            let hl = &coeffs[offset + size..offset + 2 * size];
            let hh = &coeffs[offset + 2 * size..offset + 3 * size];
            offset += 3 * size;
            let (ih, iw, oh, ow) = (lvl.in_h, lvl.in_w, lvl.out_h, lvl.out_w);

            let mut row_lo = vec![0.0; ih * ow];
            let mut row_hi = vec![0.0; ih * ow];
            let mut ca = vec![0.0; oh];
            let mut cd = vec![0.0; oh];
            let mut col = vec![0.0; ih];
            for (a_src, d_src, dst) in [(&current[..], lh, &mut row_lo), (hl, hh, &mut row_hi)] {
                for c in 0..ow {
                    for r in 0..oh {
                        ca[r] = a_src[r * ow + c];
                        cd[r] = d_src[r * ow + c];
                    }
                    synthesize_line(&ca, &cd, &self.lo, &self.hi, &mut col);
                    for r in 0..ih {
                        dst[r * ow + c] = col[r];
                    }
                }
            }
            let mut next = vec![0.0; ih * iw];
            for r in 0..ih {
                synthesize_line(
                    &row_lo[r * ow..(r + 1) * ow],
                    &row_hi[r * ow..(r + 1) * ow],
                    &self.lo,
                    &self.hi,
                    &mut next[r * iw..(r + 1) * iw],
                );
            }
            current = next;
        }
        current
    }

    fn analyze_values(&self, x: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.positions * self.channels];
        for c in 0..self.channels {
            let coeffs = self.analyze_plane(&x[c * plane..(c + 1) * plane]);
            for (p, v) in coeffs.into_iter().enumerate() {
                out[p * self.channels + c] = v;
            }
        }
        out
    }

    fn synthesize_values(&self, h: &[f64]) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        let mut buf = vec![0.0; self.positions];
        for c in 0..self.channels {
            for (p, b) in buf.iter_mut().enumerate() {
                *b = h[p * self.channels + c];
            }
            let img = self.synthesize_plane(&buf);
            out[c * plane..(c + 1) * plane].copy_from_slice(&img);
        }
        out
    }
}

impl Representation for WaveletRepresentation {
    fn layout(&self) -> &Arc<BlockLayout> {
        &self.layout
    }

    fn signal_shape(&self) -> &Shape {
        &self.shape
    }

    fn synthesize(&self, h: &CoefficientVector) -> Result<Signal> {
        check_coefficients(&self.layout, h)?;
        Signal::new(self.synthesize_values(h.values()), self.shape.clone())
    }

    fn analyze(&self, x: &Signal) -> Result<CoefficientVector> {
        check_signal(&self.shape, x)?;
        CoefficientVector::from_flat(self.layout.clone(), self.analyze_values(x.values()))
    }

    fn synthesize_vjp(&self, h: &CoefficientVector, cotangent: &[f64]) -> Result<Vec<f64>> {
        check_coefficients(&self.layout, h)?;
        check_cotangent(&self.shape, cotangent)?;
        Ok(self.analyze_values(cotangent))
    }

    fn scale_labels(&self) -> Option<&[BlockLabel]> {
        Some(&self.labels)
    }
}

pub fn dwt_forward(x: &Signal, spec: WaveletSpec) -> Result<CoefficientVector> {
    WaveletRepresentation::new(x.shape().clone(), spec)?.analyze(x)
}

pub fn dwt_inverse(h: &CoefficientVector, spec: WaveletSpec, shape: Shape) -> Result<Signal> {
    WaveletRepresentation::new(shape, spec)?.synthesize(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Signal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Signal::new(
            (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect(),
            Shape::image(h, w, 1),
        )
        .unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn filters_are_orthonormal() {
        for p in 1..=6 {
            let g = WaveletFamily::Daubechies(p).scaling_filter().unwrap();
            let h = WaveletFamily::Daubechies(p).wavelet_filter().unwrap();
            let norm: f64 = g.iter().map(|v| v * v).sum();
            assert!((norm - 1.0).abs() < 1e-12, "db{p} norm {norm}");
            for shift in (2..g.len()).step_by(2) {
                let s: f64 = (0..g.len() - shift).map(|i| g[i] * g[i + shift]).sum();
                assert!(s.abs() < 1e-12, "db{p} shift {shift}: {s}");
            }
            let cross: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn haar_line_of_ones() {
        let lo = DB1.to_vec();
        let hi = WaveletFamily::Daubechies(1).wavelet_filter().unwrap();
        let mut a = vec![0.0; 2];
        let mut d = vec![0.0; 2];
        analyze_line(&[1.0; 4], &lo, &hi, &mut a, &mut d);
        for v in a {
            assert!((v - 2f64.sqrt()).abs() < 1e-15);
        }
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_image_has_no_haar_detail() {
        let x = Signal::new(vec![0.7; 64], Shape::image(8, 8, 1)).unwrap();
        let rep = WaveletRepresentation::new(x.shape().clone(), WaveletSpec::daubechies(1, 1)).unwrap();
        let h = rep.analyze(&x).unwrap();
        let labels = rep.scale_labels().unwrap();
        for (b, label) in labels.iter().enumerate() {
            if label.subband != Subband::Approx {
                assert!(h.block(b)[0].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn too_many_levels_rejected() {
        assert!(WaveletRepresentation::new(Shape::image(16, 16, 1), WaveletSpec::daubechies(3, 5)).is_err());
        assert!(WaveletRepresentation::new(Shape::image(16, 16, 1), WaveletSpec::daubechies(3, 4)).is_ok());
        assert!(WaveletRepresentation::new(Shape::image(16, 16, 1), WaveletSpec::daubechies(3, 0)).is_err());
    }

    #[test]
    fn db3_round_trip_and_energy() {
        let x = random_image(16, 16, 7);
        let spec = WaveletSpec::daubechies(3, 2);
        let h = dwt_forward(&x, spec).unwrap();
        let y = dwt_inverse(&h, spec, x.shape().clone()).unwrap();
        assert!(rel_err(y.values(), x.values()) < 1e-8);
        let ex: f64 = x.values().iter().map(|v| v * v).sum();
        let eh: f64 = h.values().iter().map(|v| v * v).sum();
        assert!((ex - eh).abs() / ex < 1e-8);
    }

    #[test]
    fn rectangular_multichannel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::image(12, 20, 3);
        let x = Signal::new((0..720).map(|_| rng.random_range(-1.0..1.0)).collect(), shape.clone()).unwrap();
        let rep = WaveletRepresentation::new(shape, WaveletSpec::daubechies(2, 3)).unwrap();
        assert!(rep.layout().dims().iter().all(|&d| d == 3));
        let y = rep.synthesize(&rep.analyze(&x).unwrap()).unwrap();
        assert!(rel_err(y.values(), x.values()) < 1e-8);
    }

    #[test]
    fn zero_coefficients_give_zero_image() {
        let rep = WaveletRepresentation::new(Shape::image(8, 8, 1), WaveletSpec::daubechies(2, 2)).unwrap();
        let h = CoefficientVector::filled(rep.layout().clone(), 0.0);
        assert!(rep.synthesize(&h).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_unit_coefficient_is_recovered() {
        let rep = WaveletRepresentation::new(Shape::image(16, 16, 1), WaveletSpec::daubechies(2, 2)).unwrap();
        let mut h = CoefficientVector::filled(rep.layout().clone(), 0.0);
        // an interior coarse approximation position
        let approx = rep.labels.iter().filter(|l| l.subband == Subband::Approx).count();
        let side = (approx as f64).sqrt() as usize;
        let target = (side / 2) * side + side / 2;
        h.block_mut(target)[0] = 1.0;
        let img = rep.synthesize(&h).unwrap();
        let back = rep.analyze(&img).unwrap();
        assert!((back.block(target)[0] - 1.0).abs() < 1e-10);
        for b in 0..back.num_blocks() {
            if b != target {
                assert!(back.block(b)[0].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn synthesis_vjp_is_adjoint() {
        let rep = WaveletRepresentation::new(Shape::image(10, 14, 1), WaveletSpec::daubechies(3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hv: Vec<f64> = (0..rep.layout().total_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = CoefficientVector::from_flat(rep.layout().clone(), hv).unwrap();
        let g: Vec<f64> = (0..140).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = rep.synthesize(&h).unwrap().values().iter().zip(&g).map(|(a, b)| a * b).sum();
        let u = rep.synthesize_vjp(&h, &g).unwrap();
        let rhs: f64 = u.iter().zip(h.values()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
