//! Pixel RDE, CartoonX and the rate-distortion scatter on synthetic
//! piecewise-smooth greyscale images.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::ScatterRow;
use crate::distortions::{argmax, Distortion};
use crate::error::{invalid, Result};
use crate::models::{accuracy, train_model, Example, LayerSpec, Network, Target, Task, TrainConfig};
use crate::obfuscations::{GaussianPerturbation, GaussianSpec};
use crate::objective::{derive_seed, Model, Problem, ProblemSet};
use crate::representations::{BlockLabel, PixelGroups, Representation, Subband, WaveletRepresentation, WaveletSpec};
use crate::solvers::{solve_l1, ExplanationResult, SolverConfig, SolverKind};
use crate::types::{CoefficientVector, Mask, Shape, Signal};

pub const IMAGE_SIDE: usize = 32;
pub const SHAPE_CLASSES: [&str; 4] = ["disk", "square", "hbar", "vbar"];

/// A `side × side` image: a dark, smooth linear-gradient background plus
/// one brighter constant-intensity shape of the given class, clipped to
/// `[0, 1]`. The dark background keeps the zero-padded wavelet border from
/// dominating the per-scale statistics.
pub fn synthetic_image(seed: u64, class: usize, side: usize) -> Result<Signal> {
    if class >= SHAPE_CLASSES.len() {
        return Err(invalid(format!("unknown shape class {class}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.random_range(0.0..0.12);
    let gr: f64 = rng.random_range(-0.1..0.1);
    let gc: f64 = rng.random_range(-0.1..0.1);
    let contrast: f64 = rng.random_range(0.45..0.75);
    let s = side as f64;
    let (cr, cc) = (rng.random_range(0.3 * s..0.7 * s), rng.random_range(0.3 * s..0.7 * s));
    let inside: Box<dyn Fn(f64, f64) -> bool> = match class {
        0 => {
            let r = rng.random_range(0.15 * s..0.25 * s);
            Box::new(move |y, x| (y - cr).powi(2) + (x - cc).powi(2) <= r * r)
        }
        1 => {
            let h = rng.random_range(0.12 * s..0.22 * s);
            Box::new(move |y, x| (y - cr).abs() <= h && (x - cc).abs() <= h)
        }
        2 => {
            let (h, w) = (rng.random_range(0.05 * s..0.09 * s), rng.random_range(0.28 * s..0.4 * s));
            Box::new(move |y, x| (y - cr).abs() <= h && (x - cc).abs() <= w)
        }
        _ => {
            let (h, w) = (rng.random_range(0.28 * s..0.4 * s), rng.random_range(0.05 * s..0.09 * s));
            Box::new(move |y, x| (y - cr).abs() <= h && (x - cc).abs() <= w)
        }
    };
    let mut values = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut v = base + gr * (y / s - 0.5) + gc * (x / s - 0.5);
            if inside(y, x) {
                v += contrast;
            }
            values.push(v.clamp(0.0, 1.0));
        }
    }
    Signal::new(values, Shape::image(side, side, 1))
}

/// `n` labelled images cycling through the classes; image `i` is drawn
/// from `derive_seed(seed, i)`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Result<Vec<(Signal, usize)>> {
    (0..n)
        .map(|i| {
            let class = i % SHAPE_CLASSES.len();
            Ok((synthetic_image(derive_seed(seed, i as u64), class, IMAGE_SIDE)?, class))
        })
        .collect()
}

/// Two strided convolutions and a dense read-out.
pub fn tiny_cnn_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d {
            out_channels: 8,
            kernel: 3,
            stride: 2,
            padding: 1,
            dilation: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            out_channels: 16,
            kernel: 3,
            stride: 2,
            padding: 1,
            dilation: 1,
        },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            output: SHAPE_CLASSES.len(),
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTraining {
    pub train_images: usize,
    pub test_images: usize,
    pub train: TrainConfig,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            train_images: 1600,
            test_images: 200,
            train: TrainConfig {
                epochs: 20,
                lr: 0.003,
                batch_size: 16,
                seed: 0,
                gamma: 0.0,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainedClassifier {
    #[serde(skip)]
    pub network: Network,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub epoch_loss: Vec<f64>,
}

fn to_examples(data: &[(Signal, usize)]) -> Vec<Example> {
    data.iter()
        .map(|(x, y)| Example::new(x.values().to_vec(), Target::Label(*y)))
        .collect()
}

/// Trains the tiny CNN on a fresh synthetic corpus; the test corpus uses a
/// disjoint seed.
pub fn train_shape_classifier(opts: &ClassifierTraining, seed: u64) -> Result<TrainedClassifier> {
    let train = to_examples(&synthetic_corpus(opts.train_images, derive_seed(seed, 1))?);
    let test = to_examples(&synthetic_corpus(opts.test_images, derive_seed(seed, 2))?);
    let init = Network::init(
        Task::Classification,
        (1, IMAGE_SIDE, IMAGE_SIDE),
        &tiny_cnn_layers(),
        derive_seed(seed, 3),
    )?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, 4),
        ..opts.train.clone()
    };
    let (network, report) = train_model(&init, &train, &cfg)?;
    Ok(TrainedClassifier {
        train_accuracy: accuracy(&network, &train)?,
        test_accuracy: accuracy(&network, &test)?,
        network,
        epoch_loss: report.epoch_loss,
    })
}

/// Options shared by Pixel RDE and CartoonX.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageRdeOptions {
    pub solver: SolverConfig,
    /// Scale `C` of the pre-softmax distortion.
    pub scale: f64,
    /// Explained class; `None` freezes the argmax of `Φ(x)`.
    pub label: Option<usize>,
    pub wavelet_order: usize,
    pub wavelet_levels: usize,
}

impl Default for ImageRdeOptions {
    fn default() -> Self {
        Self::pixel_rde()
    }
}

impl ImageRdeOptions {
    /// λ = 0.6, 2000 steps, lr 0.003, 64 samples, C = 100.
    pub fn pixel_rde() -> Self {
        Self {
            solver: SolverConfig::default(),
            scale: 100.0,
            label: None,
            wavelet_order: 3,
            wavelet_levels: 5,
        }
    }

    /// Pixel RDE defaults with λ = 3 on a db3, J = 5 wavelet system.
    pub fn cartoonx() -> Self {
        let mut o = Self::pixel_rde();
        o.solver.lambda = 3.0;
        o
    }

    /// Same hyperparameters with step and sample counts cut for desk runs.
    pub fn desk(mut self) -> Self {
        self.solver.steps = 400;
        self.solver.samples = 16;
        self.solver.lr = 0.01;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageExplanation {
    pub result: ExplanationResult,
    pub label: usize,
    /// Pixel mask (Pixel RDE) or clipped masked reconstruction (CartoonX),
    /// laid out as the greyscale image.
    pub image: Vec<f64>,
    pub height: usize,
    pub width: usize,
}

/// Channel mean, so RGB input becomes a single-channel image.
pub fn greyscale(x: &Signal) -> Result<Signal> {
    match *x.shape() {
        Shape::Image {
            height,
            width,
            channels,
        } => {
            if channels == 1 {
                return Ok(x.clone());
            }
            let plane = height * width;
            let v = x.values();
            let grey = (0..plane)
                .map(|p| (0..channels).map(|c| v[c * plane + p]).sum::<f64>() / channels as f64)
                .collect();
            Signal::new(grey, Shape::image(height, width, 1))
        }
        _ => Err(invalid("expected an image signal")),
    }
}

fn image_dims(x: &Signal) -> Result<(usize, usize)> {
    match *x.shape() {
        Shape::Image { height, width, .. } => Ok((height, width)),
        _ => Err(invalid("expected an image signal")),
    }
}

fn classification_distortion(model: &Network, x: &Signal, opts: &ImageRdeOptions) -> Result<(usize, Distortion)> {
    if model.task() != Task::Classification {
        return Err(invalid("image explanations need a classification model"));
    }
    let label = match opts.label {
        Some(l) => l,
        None => argmax(&model.forward(x)?),
    };
    Ok((
        label,
        Distortion::PreSoftmax {
            label,
            scale: opts.scale,
        },
    ))
}

fn l1_config(opts: &ImageRdeOptions) -> SolverConfig {
    SolverConfig {
        kind: SolverKind::L1,
        ..opts.solver.clone()
    }
}

pub fn pixel_problem(x: &Signal, model: Arc<Network>, opts: &ImageRdeOptions) -> Result<(usize, Problem)> {
    let (label, distortion) = classification_distortion(&model, x, opts)?;
    let channels = match *x.shape() {
        Shape::Image { channels, .. } => channels,
        _ => return Err(invalid("expected an image signal")),
    };
    let repr = Arc::new(PixelGroups::identity(x.shape().clone(), channels)?);
    let pert = Arc::new(GaussianPerturbation {
        spec: GaussianSpec::adaptive_global(),
    });
    let problem = Problem::new(x.clone(), repr, pert, model, distortion)?.with_clip(0.0, 1.0);
    Ok((label, problem))
}

/// Per-pixel ℓ1 relaxation with adaptive global Gaussian noise.
pub fn run_pixel_rde(x: &Signal, model: Arc<Network>, opts: &ImageRdeOptions) -> Result<ImageExplanation> {
    let (height, width) = image_dims(x)?;
    let (label, problem) = pixel_problem(x, model, opts)?;
    let result = solve_l1(&ProblemSet::from(problem), &l1_config(opts))?;
    Ok(ImageExplanation {
        image: result.mask.values().to_vec(),
        result,
        label,
        height,
        width,
    })
}

pub fn cartoonx_problem(
    x: &Signal,
    model: Arc<Network>,
    opts: &ImageRdeOptions,
) -> Result<(usize, Arc<WaveletRepresentation>, Problem)> {
    let grey = greyscale(x)?;
    let (h, w) = image_dims(&grey)?;
    let feasible = WaveletSpec::max_levels(h.min(w));
    if feasible == 0 {
        return Err(invalid(format!("a {h}x{w} image is too small for one wavelet level")));
    }
    let levels = opts.wavelet_levels.min(feasible).max(1);
    let (label, distortion) = classification_distortion(&model, &grey, opts)?;
    let repr = Arc::new(WaveletRepresentation::new(
        grey.shape().clone(),
        WaveletSpec::daubechies(opts.wavelet_order, levels),
    )?);
    let pert = Arc::new(GaussianPerturbation {
        spec: GaussianSpec::adaptive_per_scale(repr.scale_labels())?,
    });
    let problem = Problem::new(grey, repr.clone(), pert, model, distortion)?.with_clip(0.0, 1.0);
    Ok((label, repr, problem))
}

/// `clip₀₁(f(s ⊙ h))`.
pub fn cartoonx_image(repr: &WaveletRepresentation, h: &CoefficientVector, mask: &Mask) -> Result<Vec<f64>> {
    let mut masked = h.clone();
    for (b, &s) in mask.values().iter().enumerate() {
        masked.block_mut(b).iter_mut().for_each(|v| *v *= s);
    }
    Ok(repr.synthesize(&masked)?.clipped(0.0, 1.0).into_values())
}

/// ℓ1 relaxation over db wavelet coefficients with per-scale Gaussian noise.
pub fn run_cartoonx(x: &Signal, model: Arc<Network>, opts: &ImageRdeOptions) -> Result<ImageExplanation> {
    let (label, repr, problem) = cartoonx_problem(x, model, opts)?;
    let (height, width) = image_dims(&problem.signal)?;
    let h = problem.coefficients.clone();
    let result = solve_l1(&ProblemSet::from(problem), &l1_config(opts))?;
    let image = cartoonx_image(&repr, &h, &result.mask)?;
    Ok(ImageExplanation {
        result,
        label,
        image,
        height,
        width,
    })
}

/// Share of the mask's ℓ1 mass on blocks coarser than scale 1.
pub fn coarse_mass_fraction(mask: &Mask, labels: &[BlockLabel]) -> f64 {
    let total = mask.sparsity_l1();
    if total == 0.0 {
        return 0.0;
    }
    let coarse: f64 = mask
        .values()
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.scale > 1 || l.subband == Subband::Approx)
        .map(|(v, _)| v)
        .sum();
    coarse / total
}

/// Pixel RDE and CartoonX on every image with matched budgets: both
/// methods share the solver settings (λ included) and the distortion of
/// `opts`. Image `i` uses solver seed `derive_seed(seed, i)`.
pub fn run_rd_scatter(corpus: &[(String, Signal)], model: Arc<Network>, opts: &ImageRdeOptions) -> Result<Vec<ScatterRow>> {
    let per_image = corpus
        .par_iter()
        .enumerate()
        .map(|(i, (id, x))| {
            let mut o = opts.clone();
            o.solver.seed = derive_seed(opts.solver.seed, i as u64);
            let p = run_pixel_rde(x, model.clone(), &o)?;
            let c = run_cartoonx(x, model.clone(), &o)?;
            let row = |method: &str, r: &ExplanationResult| ScatterRow {
                image_id: id.clone(),
                method: method.into(),
                l1_normalized: r.l1_normalized,
                distortion_mean: r.distortion.mean,
                distortion_stderr: r.distortion.std_error,
            };
            Ok(vec![row("pixel", &p.result), row("wavelet", &c.result)])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Fraction of images whose wavelet point has both lower distortion and
/// lower normalized ℓ1 than the pixel point.
pub fn wavelet_dominance(rows: &[ScatterRow]) -> f64 {
    let mut wins = 0;
    let mut n = 0;
    for pair in rows.chunks(2) {
        if let [p, w] = pair {
            n += 1;
            if w.distortion_mean < p.distortion_mean && w.l1_normalized < p.l1_normalized {
                wins += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        wins as f64 / n as f64
    }
}
