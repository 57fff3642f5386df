//! Audio interpretation queries on synthetic harmonic sounds: which
//! frequencies matter, and whether a classifier relies on magnitude or
//! phase.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::distortions::{argmax, Distortion};
use crate::error::{invalid, RdeError, Result};
use crate::obfuscations::{BaselineInpainter, InpaintingPerturbation, NoiseSignalPerturbation};
use crate::objective::{derive_seed, Model, Problem, ProblemSet};
use crate::representations::{FourierPerFrequency, FourierSplit, Representation};
use crate::solvers::{lexicographic_supports, solve_bernoulli, ExplanationResult, SolverConfig, SolverKind};
use crate::types::{Mask, Signal};

pub const AUDIO_LEN: usize = 64;

/// Pitch (low/high fundamental) crossed with phase coherence.
pub const SOUND_CLASSES: [&str; 4] = ["low_coherent", "low_scattered", "high_coherent", "high_scattered"];

const FUNDAMENTALS: [usize; 2] = [3, 5];
const HARMONICS: usize = 5;

fn fundamental(class: usize) -> usize {
    FUNDAMENTALS[class / 2]
}

fn coherent(class: usize) -> bool {
    class.is_multiple_of(2)
}

/// DFT bins (both halves of the spectrum) carrying the harmonics of `f0`.
pub fn harmonic_bins(f0: usize, n: usize) -> Vec<usize> {
    let mut bins: Vec<usize> = (1..=HARMONICS)
        .map(|h| h * f0)
        .filter(|&j| j > 0 && j < n.div_ceil(2))
        .flat_map(|j| [j, n - j])
        .collect();
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// Scales `x` so its DFT magnitudes have unit total power, `Σ m_j² = 1`.
pub fn power_normalize(x: &[f64]) -> Result<Vec<f64>> {
    // Parseval: Σ m_j² = n Σ x_l²
    let power = x.len() as f64 * x.iter().map(|v| v * v).sum::<f64>();
    if !(power > 0.0) {
        return Err(invalid("cannot power-normalize a silent signal"));
    }
    let g = power.sqrt().recip();
    Ok(x.iter().map(|v| v * g).collect())
}

/// A power-normalized harmonic comb. Coherent classes start every
/// harmonic in cosine phase; scattered classes alternate between sine
/// and minus-sine phase. Phases carry ±0.15 rad of jitter. Amplitudes fall off as `1/h` with ±20 % jitter and a
/// little white noise is added.
pub fn harmonic_signal(seed: u64, class: usize, n: usize) -> Result<Signal> {
    if class >= SOUND_CLASSES.len() {
        return Err(invalid(format!("unknown sound class {class}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = fundamental(class);
    let mut x = vec![0.0; n];
    for h in 1..=HARMONICS {
        let j = h * f0;
        if j >= n.div_ceil(2) {
            break;
        }
        let amp = rng.random_range(0.8..1.2) / h as f64;
        let base = if coherent(class) {
            0.0
        } else if h % 2 == 1 {
            -FRAC_PI_2
        } else {
            FRAC_PI_2
        };
        let phase = base + rng.random_range(-0.15..0.15);
        for (l, v) in x.iter_mut().enumerate() {
            *v += amp * (TAU * (j * l) as f64 / n as f64 + phase).cos();
        }
    }
    for v in x.iter_mut() {
        *v += 0.02 * rng.sample::<f64, _>(StandardNormal);
    }
    Signal::vector(power_normalize(&x)?)
}

/// `per_class` samples of every class; sample `i` of class `c` is drawn
/// from `derive_seed(seed, c · per_class + i)`.
pub fn harmonic_corpus(per_class: usize, seed: u64) -> Result<Vec<(Signal, usize)>> {
    let mut out = Vec::with_capacity(per_class * SOUND_CLASSES.len());
    for c in 0..SOUND_CLASSES.len() {
        for i in 0..per_class {
            out.push((harmonic_signal(derive_seed(seed, (c * per_class + i) as u64), c, AUDIO_LEN)?, c));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralFeature {
    /// Power spectrum `m_j²`: blind to phase.
    Power,
    /// Unit phasors `c_j / √(m_j² + ε²)`: blind to magnitude wherever
    /// `m_j ≫ ε`.
    Phase,
}

const PHASE_EPS: f64 = 1e-6;

/// A linear read-out of DFT features: `Φ(x) = W φ(x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralClassifier {
    pub feature: SpectralFeature,
    pub n: usize,
    /// `m × features`, row-major; `features` is `n` for power and `2n`
    /// (real parts, then imaginary parts) for phase.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SpectralClassifier {
    pub fn new(feature: SpectralFeature, n: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let f = match feature {
            SpectralFeature::Power => n,
            SpectralFeature::Phase => 2 * n,
        };
        if n == 0 || bias.is_empty() || weights.len() != bias.len() * f {
            return Err(RdeError::Shape(format!(
                "{} weights for {} outputs and {f} features",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            feature,
            n,
            weights,
            bias,
        })
    }

    /// Scores low- versus high-pitched sounds from the power at each
    /// fundamental's harmonic bins.
    pub fn magnitude_only(n: usize) -> Result<Self> {
        let mut weights = vec![0.0; 2 * n];
        for (row, &f0) in FUNDAMENTALS.iter().enumerate() {
            for j in harmonic_bins(f0, n) {
                weights[row * n + j] = 40.0;
            }
        }
        Self::new(SpectralFeature::Power, n, weights, vec![0.0; 2])
    }

    /// Scores coherent versus scattered sounds from the cosine of the
    /// phases at every harmonic bin.
    pub fn phase_only(n: usize) -> Result<Self> {
        let mut bins: Vec<usize> = FUNDAMENTALS.iter().flat_map(|&f0| harmonic_bins(f0, n)).collect();
        bins.sort_unstable();
        bins.dedup();
        let mut weights = vec![0.0; 2 * 2 * n];
        for j in bins {
            weights[j] = 4.0;
        }
        Self::new(SpectralFeature::Phase, n, weights, vec![0.0, 20.0])
    }

    fn num_features(&self) -> usize {
        self.weights.len() / self.bias.len()
    }

    fn spectrum(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        (0..n)
            .map(|j| {
                x.iter().enumerate().fold((0.0, 0.0), |(re, im), (l, &v)| {
                    let a = TAU * ((l * j) % n) as f64 / n as f64;
                    (re + v * a.cos(), im - v * a.sin())
                })
            })
            .unzip()
    }

    fn features(&self, re: &[f64], im: &[f64]) -> Vec<f64> {
        match self.feature {
            SpectralFeature::Power => re.iter().zip(im).map(|(a, b)| a * a + b * b).collect(),
            SpectralFeature::Phase => {
                let r: Vec<f64> = re.iter().zip(im).map(|(a, b)| (a * a + b * b + PHASE_EPS * PHASE_EPS).sqrt()).collect();
                re.iter().zip(&r).map(|(a, r)| a / r).chain(im.iter().zip(&r).map(|(b, r)| b / r)).collect()
            }
        }
    }

    fn check_input(&self, x: &Signal) -> Result<()> {
        if x.len() != self.n {
            return Err(RdeError::Shape(format!("model expects {} samples, got {}", self.n, x.len())));
        }
        Ok(())
    }
}

impl Model for SpectralClassifier {
    fn output_dim(&self) -> usize {
        self.bias.len()
    }

    fn forward(&self, x: &Signal) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let (re, im) = self.spectrum(x.values());
        let phi = self.features(&re, &im);
        let f = self.num_features();
        Ok(self
            .bias
            .iter()
            .enumerate()
            .map(|(o, b)| b + self.weights[o * f..(o + 1) * f].iter().zip(&phi).map(|(w, p)| w * p).sum::<f64>())
            .collect())
    }

    fn input_gradient(&self, x: &Signal, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if cotangent.len() != self.output_dim() {
            return Err(RdeError::Shape(format!(
                "cotangent has {} entries, expected {}",
                cotangent.len(),
                self.output_dim()
            )));
        }
        let n = self.n;
        let f = self.num_features();
        let mut gphi = vec![0.0; f];
        for (o, c) in cotangent.iter().enumerate() {
            for (g, w) in gphi.iter_mut().zip(&self.weights[o * f..(o + 1) * f]) {
                *g += c * w;
            }
        }
        let (re, im) = self.spectrum(x.values());
        // gradient with respect to (re_j, im_j)
        let (gre, gim): (Vec<f64>, Vec<f64>) = match self.feature {
            SpectralFeature::Power => (0..n).map(|j| (2.0 * gphi[j] * re[j], 2.0 * gphi[j] * im[j])).unzip(),
            SpectralFeature::Phase => (0..n)
                .map(|j| {
                    let (a, b) = (re[j], im[j]);
                    let r = (a * a + b * b + PHASE_EPS * PHASE_EPS).sqrt();
                    let r3 = r * r * r;
                    let (ga, gb) = (gphi[j], gphi[n + j]);
                    (
                        ga * (1.0 / r - a * a / r3) - gb * a * b / r3,
                        -ga * a * b / r3 + gb * (1.0 / r - b * b / r3),
                    )
                })
                .unzip(),
        };
        Ok((0..n)
            .map(|l| {
                (0..n)
                    .map(|j| {
                        let a = TAU * ((l * j) % n) as f64 / n as f64;
                        gre[j] * a.cos() - gim[j] * a.sin()
                    })
                    .sum()
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioMode {
    /// One Bernoulli variable per frequency, covering its magnitude and
    /// phase together; dropped frequencies are inpainted.
    PerFrequency,
    /// Two Bernoulli variables (whole magnitude spectrum, whole phase
    /// spectrum) shared by every sample of a class; dropped spectra come
    /// from white noise.
    MagnitudeVsPhase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioOptions {
    pub mode: AudioMode,
    pub solver: SolverConfig,
    /// Scale `C` of the pre-softmax distortion.
    pub scale: f64,
    /// Explained class; `None` freezes each sample's argmax.
    pub label: Option<usize>,
    /// Inpainter noise as a fraction of the coefficient std.
    pub inpaint_noise: f64,
}

impl AudioOptions {
    /// λ = 50, lr 1e-5, 10⁶ steps, t = 0.1.
    pub fn per_frequency() -> Self {
        Self {
            mode: AudioMode::PerFrequency,
            solver: SolverConfig {
                kind: SolverKind::Bernoulli,
                lambda: 50.0,
                steps: 1_000_000,
                lr: 1e-5,
                temperature: 0.1,
                ..SolverConfig::default()
            },
            scale: 100.0,
            label: None,
            inpaint_noise: BaselineInpainter::default().noise_fraction,
        }
    }

    /// λ = 30, lr 1e-4, 2·10⁵ steps, t = 0.1.
    pub fn magnitude_vs_phase() -> Self {
        let mut o = Self::per_frequency();
        o.mode = AudioMode::MagnitudeVsPhase;
        o.solver.lambda = 30.0;
        o.solver.steps = 200_000;
        o.solver.lr = 1e-4;
        o
    }

    /// 2000 steps with a learning rate large enough for θ to traverse
    /// `[0, 1]` within them, and 8 samples per step.
    pub fn desk(mut self) -> Self {
        self.solver.steps = 2000;
        self.solver.lr = 5e-3;
        self.solver.samples = 8;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AudioExplanation {
    pub result: ExplanationResult,
    pub labels: Vec<usize>,
}

impl AudioExplanation {
    /// `(magnitude, phase)` importance for the split query.
    pub fn magnitude_phase(&self) -> Option<(f64, f64)> {
        match self.result.mask.values() {
            [m, p] => Some((*m, *p)),
            _ => None,
        }
    }
}

fn label_for(model: &dyn Model, x: &Signal, opts: &AudioOptions) -> Result<usize> {
    match opts.label {
        Some(l) => Ok(l),
        None => Ok(argmax(&model.forward(x)?)),
    }
}

/// The problem set the query optimizes over, with the label each member
/// explains.
pub fn audio_problem(signals: &[Signal], model: Arc<dyn Model>, opts: &AudioOptions) -> Result<(Vec<usize>, ProblemSet)> {
    let first = signals.first().ok_or_else(|| invalid("audio query needs at least one signal"))?;
    let n = first.len();
    let (repr, pert): (Arc<dyn Representation>, Arc<dyn crate::obfuscations::Perturbation>) = match opts.mode {
        AudioMode::PerFrequency => {
            if signals.len() != 1 {
                return Err(invalid("the per-frequency query explains a single signal"));
            }
            let inpainter = Arc::new(BaselineInpainter {
                noise_fraction: opts.inpaint_noise,
            });
            (Arc::new(FourierPerFrequency::new(n)?), Arc::new(InpaintingPerturbation { inpainter }))
        }
        AudioMode::MagnitudeVsPhase => {
            let repr: Arc<dyn Representation> = Arc::new(FourierSplit::new(n)?);
            let pert = Arc::new(NoiseSignalPerturbation {
                representation: repr.clone(),
            });
            (repr, pert)
        }
    };
    let mut labels = Vec::with_capacity(signals.len());
    let mut problems = Vec::with_capacity(signals.len());
    for x in signals {
        let label = label_for(model.as_ref(), x, opts)?;
        labels.push(label);
        let distortion = Distortion::PreSoftmax {
            label,
            scale: opts.scale,
        };
        problems.push(Problem::new(x.clone(), repr.clone(), pert.clone(), model.clone(), distortion)?);
    }
    Ok((labels, ProblemSet::new(problems)?))
}

/// Runs the Bernoulli relaxation for the chosen query.
pub fn run_audio_query(signals: &[Signal], model: Arc<dyn Model>, opts: &AudioOptions) -> Result<AudioExplanation> {
    let (labels, problem) = audio_problem(signals, model, opts)?;
    let cfg = SolverConfig {
        kind: SolverKind::Bernoulli,
        ..opts.solver.clone()
    };
    Ok(AudioExplanation {
        result: solve_bernoulli(&problem, &cfg)?,
        labels,
    })
}

/// Minimizer of `D(s) + λ‖s‖₀` over every binary mask, evaluated on the
/// evaluation seed (first in lexicographic support order on ties).
pub fn penalized_oracle(problem: &ProblemSet, lambda: f64, samples: usize, eval_seed: u64) -> Result<Mask> {
    let k = problem.num_blocks();
    if k > 12 {
        return Err(invalid(format!("penalized oracle limited to 12 blocks, got {k}")));
    }
    let mut best: Option<(f64, Mask)> = None;
    for sup in lexicographic_supports(k, k) {
        let mask = Mask::from_support(k, &sup)?;
        let value = problem.estimate(&mask, samples, eval_seed)?.mean + lambda * sup.len() as f64;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, mask));
        }
    }
    Ok(best.expect("at least the empty support").1)
}

/// One row of a magnitude/phase importance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub instrument: String,
    pub magnitude_importance: f64,
    pub phase_importance: f64,
}

pub const IMPORTANCE_HEADER: [&str; 3] = ["instrument", "magnitude_importance", "phase_importance"];

pub fn importance_table_csv(rows: &[ImportanceRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(vec![]);
    w.write_record(IMPORTANCE_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_importance_table(text: &str) -> Result<Vec<ImportanceRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(RdeError::from)).collect()
}

/// Per-frequency importance θ as a `frequency,theta` CSV.
pub fn frequency_table_csv(theta: &[f64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["frequency", "theta"])?;
    for (j, t) in theta.iter().enumerate() {
        w.write_record([j.to_string(), t.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{finite_diff_check, CheckStatus};
    use crate::representations::dft_forward;

    #[test]
    fn signals_have_unit_spectral_power() {
        for c in 0..4 {
            let x = harmonic_signal(c as u64, c, AUDIO_LEN).unwrap();
            let h = dft_forward(&x).unwrap();
            let power: f64 = h.values().chunks(2).map(|p| p[0] * p[0]).sum();
            assert!((power - 1.0).abs() < 1e-12, "{power}");
        }
    }

    #[test]
    fn harmonic_bins_are_symmetric() {
        assert_eq!(harmonic_bins(5, 64), vec![5, 10, 15, 20, 25, 39, 44, 49, 54, 59]);
        assert_eq!(harmonic_bins(20, 32), Vec::<usize>::new());
    }

    #[test]
    fn power_model_is_phase_blind() {
        let model = SpectralClassifier::magnitude_only(AUDIO_LEN).unwrap();
        let a = harmonic_signal(9, 0, AUDIO_LEN).unwrap();
        let mut shifted = a.values().to_vec();
        shifted.rotate_left(7);
        let b = Signal::vector(shifted).unwrap();
        for (u, v) in model.forward(&a).unwrap().iter().zip(model.forward(&b).unwrap()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_model_is_magnitude_blind() {
        let model = SpectralClassifier::phase_only(AUDIO_LEN).unwrap();
        let x = harmonic_signal(3, 2, AUDIO_LEN).unwrap();
        let doubled = Signal::vector(x.values().iter().map(|v| 2.5 * v).collect()).unwrap();
        for (u, v) in model.forward(&x).unwrap().iter().zip(model.forward(&doubled).unwrap()) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn models_classify_their_attribute() {
        let mag = SpectralClassifier::magnitude_only(AUDIO_LEN).unwrap();
        let phase = SpectralClassifier::phase_only(AUDIO_LEN).unwrap();
        let corpus = harmonic_corpus(25, 1).unwrap();
        let hits = |m: &SpectralClassifier, f: fn(usize) -> usize| {
            corpus.iter().filter(|(x, c)| argmax(&m.forward(x).unwrap()) == f(*c)).count() as f64 / corpus.len() as f64
        };
        let (a, b) = (hits(&mag, |c| c / 2), hits(&phase, |c| c % 2));
        assert!(a >= 0.99 && b >= 0.9, "{a} {b}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        // scaled up so the step h = 1e-4 is small against the spectrum
        let x = Signal::vector(harmonic_signal(5, 1, 16).unwrap().values().iter().map(|v| 10.0 * v).collect()).unwrap();
        for model in [SpectralClassifier::magnitude_only(16).unwrap(), SpectralClassifier::phase_only(16).unwrap()] {
            let r = finite_diff_check(&model, &x, 1e-4, 1e-4).unwrap();
            assert_eq!(r.status, CheckStatus::Pass, "{:?}: {}", model.feature, r.max_relative_error);
        }
    }

    fn class_samples(class: usize, per_class: usize) -> Vec<Signal> {
        harmonic_corpus(per_class, 11)
            .unwrap()
            .into_iter()
            .filter(|(_, c)| *c == class)
            .map(|(x, _)| x)
            .collect()
    }

    #[test]
    fn split_query_finds_magnitude_for_power_model() {
        let model: Arc<dyn Model> = Arc::new(SpectralClassifier::magnitude_only(AUDIO_LEN).unwrap());
        let signals = class_samples(2, 4);
        let opts = AudioOptions::magnitude_vs_phase().desk();
        let e = run_audio_query(&signals, model.clone(), &opts).unwrap();
        let (m, p) = e.magnitude_phase().unwrap();
        assert!(m >= 0.9 && p <= 0.1, "{m} {p}");
        let (_, set) = audio_problem(&signals, model, &opts).unwrap();
        let oracle = penalized_oracle(&set, opts.solver.lambda, opts.solver.samples, opts.solver.eval_seed).unwrap();
        assert_eq!(oracle.support(0.5), vec![FourierSplit::MAGNITUDE]);
    }

    #[test]
    fn per_frequency_query_favours_harmonics() {
        let model: Arc<dyn Model> = Arc::new(SpectralClassifier::magnitude_only(AUDIO_LEN).unwrap());
        let x = harmonic_signal(4, 0, AUDIO_LEN).unwrap();
        let opts = AudioOptions::per_frequency().desk();
        let e = run_audio_query(&[x], model, &opts).unwrap();
        let theta = e.result.mask.values();
        let bins = harmonic_bins(3, AUDIO_LEN);
        // conjugate bins j and n − j carry the same information, so their
        // importance is shared rather than duplicated
        let on: f64 = bins.iter().map(|&j| theta[j]).sum::<f64>() / bins.len() as f64;
        let off = (0..AUDIO_LEN).filter(|j| !bins.contains(j)).map(|j| theta[j]).fold(0.0, f64::max);
        assert!(on > 0.3 && off < 0.05, "{on} {off}");
    }

    #[test]
    fn per_frequency_needs_one_signal() {
        let model: Arc<dyn Model> = Arc::new(SpectralClassifier::magnitude_only(8).unwrap());
        let x = Signal::vector(vec![1.0; 8]).unwrap();
        assert!(audio_problem(&[x.clone(), x], model.clone(), &AudioOptions::per_frequency()).is_err());
        assert!(audio_problem(&[], model, &AudioOptions::per_frequency()).is_err());
    }

    #[test]
    fn unknown_mode_is_rejected() {
        assert!(serde_json::from_str::<AudioMode>("\"loudness\"").is_err());
        assert_eq!(
            serde_json::from_str::<AudioMode>("\"magnitude_vs_phase\"").unwrap(),
            AudioMode::MagnitudeVsPhase
        );
    }

    #[test]
    fn defaults_echo_published_values() {
        let f = AudioOptions::per_frequency().solver;
        assert_eq!((f.lambda, f.lr, f.temperature, f.steps), (50.0, 1e-5, 0.1, 1_000_000));
        let s = AudioOptions::magnitude_vs_phase().solver;
        assert_eq!((s.lambda, s.lr, s.temperature, s.steps), (30.0, 1e-4, 0.1, 200_000));
        assert!(AudioOptions::magnitude_vs_phase().desk().solver.steps <= 2000);
    }

    #[test]
    fn importance_table_round_trip() {
        let rows: Vec<ImportanceRow> = [("Guitar", 0.0, 0.999), ("String", 1.0, 0.0), ("Mallet", 0.005, 0.217)]
            .into_iter()
            .map(|(i, m, p)| ImportanceRow {
                instrument: i.into(),
                magnitude_importance: m,
                phase_importance: p,
            })
            .collect();
        let text = importance_table_csv(&rows).unwrap();
        assert!(text.starts_with("instrument,magnitude_importance,phase_importance\nGuitar,0.0,0.999\n"));
        assert_eq!(read_importance_table(&text).unwrap(), rows);
    }
}
