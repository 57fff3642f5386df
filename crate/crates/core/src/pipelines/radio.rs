//! Radio-map explanations: matching pursuit over buildings and
//! measurements, and interpretation-driven training.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distortions::Distortion;
use crate::error::{invalid, Result};
use crate::models::{
    erase_buildings, interpretation_loss, mean_squared_error, simulate_radio, train_model, Example,
    InterpretationTarget, LayerSpec, MapPredictor, Network, RadioSample, RadioToyWorld, Target, Task, TrainConfig,
    WorldConfig,
};
use crate::obfuscations::Perturbation;
use crate::objective::{derive_seed, Model, Problem, ProblemSet};
use crate::representations::{GroupedStructural, Representation};
use crate::solvers::{exhaustive_oracle, matching_pursuit, ExplanationResult, SolverConfig, SolverKind};
use crate::types::{CoefficientVector, Mask};

/// Four 3×3 convolutions with dilations 1, 2, 4, 1 (receptive field 17)
/// mapping `[tx, city, measurements]` to a strength map.
pub fn radio_regressor_layers() -> Vec<LayerSpec> {
    let conv = |out_channels, dilation| LayerSpec::Conv2d {
        out_channels,
        kernel: 3,
        stride: 1,
        padding: dilation,
        dilation,
    };
    vec![
        conv(8, 1),
        LayerSpec::Relu,
        conv(8, 2),
        LayerSpec::Relu,
        conv(8, 4),
        LayerSpec::Relu,
        conv(1, 1),
        LayerSpec::Flatten,
    ]
}

/// A world, its simulated input and the missing building's pixels.
#[derive(Clone, Debug)]
pub struct RadioCase {
    pub world: RadioToyWorld,
    pub sample: RadioSample,
    pub region: Vec<usize>,
}

/// `n` random worlds; world `i` is drawn from `derive_seed(seed, i)`.
pub fn radio_dataset(n: usize, seed: u64, cfg: &WorldConfig) -> Result<Vec<RadioCase>> {
    (0..n)
        .map(|i| {
            let world = RadioToyWorld::random(derive_seed(seed, i as u64), cfg)?;
            let sample = simulate_radio(&world)?;
            let region = world
                .missing_building()
                .map(|b| b.pixels(world.side()))
                .unwrap_or_default();
            Ok(RadioCase { world, sample, region })
        })
        .collect()
}

/// Regression examples, each flagged with its erased input and region.
pub fn radio_examples(cases: &[RadioCase]) -> Result<Vec<Example>> {
    cases
        .iter()
        .map(|c| {
            let mut ex = Example::new(c.sample.input.values().to_vec(), Target::Values(c.sample.truth.clone()));
            if !c.region.is_empty() {
                ex.interpretation = Some(InterpretationTarget {
                    erased: erase_buildings(&c.sample.input)?.into_values(),
                    region: c.region.clone(),
                });
            }
            Ok(ex)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioTraining {
    pub train_worlds: usize,
    pub test_worlds: usize,
    pub world: WorldConfig,
    pub train: TrainConfig,
}

impl Default for RadioTraining {
    fn default() -> Self {
        Self {
            train_worlds: 240,
            test_worlds: 60,
            world: WorldConfig::default(),
            train: TrainConfig {
                epochs: 12,
                lr: 0.003,
                batch_size: 8,
                seed: 0,
                gamma: 0.0,
            },
        }
    }
}

/// Held-out metrics of a radio regressor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorMetrics {
    pub test_mse: f64,
    /// Mean `ℓ_int` over held-out worlds.
    pub test_interpretation_loss: f64,
}

pub fn regressor_metrics(net: &Network, cases: &[RadioCase]) -> Result<RegressorMetrics> {
    let examples = radio_examples(cases)?;
    let flagged: Vec<&RadioCase> = cases.iter().filter(|c| !c.region.is_empty()).collect();
    let mut lint = 0.0;
    for c in &flagged {
        lint += interpretation_loss(net, &c.sample.input, &c.region, &erase_buildings(&c.sample.input)?)?;
    }
    Ok(RegressorMetrics {
        test_mse: mean_squared_error(net, &examples)?,
        test_interpretation_loss: lint / flagged.len().max(1) as f64,
    })
}

/// Mean squared error of predicting every pixel by the training-set mean
/// strength.
pub fn constant_baseline_mse(train: &[RadioCase], test: &[RadioCase]) -> f64 {
    let (sum, n) = train
        .iter()
        .flat_map(|c| c.sample.truth.iter())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    let mean = sum / n.max(1) as f64;
    let (err, m) = test
        .iter()
        .flat_map(|c| c.sample.truth.iter())
        .fold((0.0, 0usize), |(s, n), v| (s + (v - mean).powi(2), n + 1));
    err / m.max(1) as f64
}

pub struct TrainedRegressor {
    pub network: Network,
    pub metrics: RegressorMetrics,
    pub baseline_mse: f64,
    pub epoch_loss: Vec<f64>,
}

fn train_and_test_cases(opts: &RadioTraining, seed: u64) -> Result<(Vec<RadioCase>, Vec<RadioCase>)> {
    Ok((
        radio_dataset(opts.train_worlds, derive_seed(seed, 1), &opts.world)?,
        radio_dataset(opts.test_worlds, derive_seed(seed, 2), &opts.world)?,
    ))
}

fn fit(opts: &RadioTraining, gamma: f64, seed: u64, train: &[RadioCase]) -> Result<(Network, Vec<f64>)> {
    let side = opts.world.propagation.side;
    let init = Network::init(Task::Regression, (3, side, side), &radio_regressor_layers(), derive_seed(seed, 3))?;
    let cfg = TrainConfig {
        seed: derive_seed(seed, 4),
        gamma,
        ..opts.train.clone()
    };
    let (net, report) = train_model(&init, &radio_examples(train)?, &cfg)?;
    Ok((net, report.epoch_loss))
}

/// Trains the regressor on fresh worlds with `opts.train.gamma`.
pub fn train_radio_model(opts: &RadioTraining, seed: u64) -> Result<TrainedRegressor> {
    let (train, test) = train_and_test_cases(opts, seed)?;
    let (network, epoch_loss) = fit(opts, opts.train.gamma, seed, &train)?;
    Ok(TrainedRegressor {
        metrics: regressor_metrics(&network, &test)?,
        baseline_mse: constant_baseline_mse(&train, &test),
        network,
        epoch_loss,
    })
}

/// Default weight of the interpretation loss.
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingComparison {
    pub gamma: f64,
    pub vanilla: RegressorMetrics,
    pub regularized: RegressorMetrics,
}

/// Vanilla `Φ` and `Φ_int` trained from the same initialization, data
/// and shuffling; only `γ` differs.
pub fn run_interpretation_training(
    opts: &RadioTraining,
    gamma: f64,
    seed: u64,
) -> Result<(Network, Network, TrainingComparison)> {
    let (train, test) = train_and_test_cases(opts, seed)?;
    let (vanilla, _) = fit(opts, 0.0, seed, &train)?;
    let (regularized, _) = fit(opts, gamma, seed, &train)?;
    let cmp = TrainingComparison {
        gamma,
        vanilla: regressor_metrics(&vanilla, &test)?,
        regularized: regressor_metrics(&regularized, &test)?,
    };
    Ok((vanilla, regularized, cmp))
}

/// How unchosen measurements are completed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Completion {
    /// Dropped from the input (set to zero).
    ZeroFill,
    /// Read off `Φ₀`'s map for the selected buildings.
    Inpaint,
    /// Each unchosen measurement is inpainted with probability `fraction`
    /// and zeroed otherwise.
    Mixed { fraction: f64 },
}

impl Completion {
    pub fn fraction(&self) -> f64 {
        match *self {
            Completion::ZeroFill => 0.0,
            Completion::Inpaint => 1.0,
            Completion::Mixed { fraction } => fraction,
        }
    }
}

/// Buildings are replaced by zero; measurements follow the completion
/// strategy.
pub struct RadioCompletion {
    representation: Arc<GroupedStructural>,
    tx_map: Vec<f64>,
    predictor: Option<Arc<dyn MapPredictor>>,
    fraction: f64,
}

impl RadioCompletion {
    pub fn new(
        representation: Arc<GroupedStructural>,
        tx_map: Vec<f64>,
        predictor: Option<Arc<dyn MapPredictor>>,
        completion: Completion,
    ) -> Result<Self> {
        let fraction = completion.fraction();
        if !(0.0..=1.0).contains(&fraction) {
            return Err(invalid(format!("completion fraction {fraction} outside [0, 1]")));
        }
        if fraction > 0.0 && predictor.is_none() {
            return Err(invalid("inpainting measurements needs an inpainter model"));
        }
        Ok(Self {
            representation,
            tx_map,
            predictor,
            fraction,
        })
    }

    /// `Φ₀`'s map given the buildings selected by `s` (`s_b > 0.5`).
    fn inpainted_map(&self, s: &Mask) -> Result<Vec<f64>> {
        let r = &self.representation;
        let mut city = vec![0.0; self.tx_map.len()];
        for b in 0..r.num_buildings() {
            if s.values()[b] > 0.5 {
                for &p in r.building_pixels(b) {
                    city[p] = 1.0;
                }
            }
        }
        self.predictor
            .as_ref()
            .expect("checked at construction")
            .predict(&self.tx_map, &city)
    }
}

impl Perturbation for RadioCompletion {
    fn sample(&self, h: &CoefficientVector, s: &Mask, rng: &mut ChaCha8Rng) -> Result<CoefficientVector> {
        let r = &self.representation;
        let mut v = CoefficientVector::filled(h.layout().clone(), 0.0);
        if self.fraction == 0.0 {
            return Ok(v);
        }
        let map = self.inpainted_map(s)?;
        for m in 0..r.num_measurements() {
            let take = self.fraction >= 1.0 || rng.random::<f64>() < self.fraction;
            if take {
                v.values_mut()[r.measurement_block(m)] = map[r.measurement_location(m)];
            }
        }
        Ok(v)
    }

    fn is_deterministic(&self) -> bool {
        self.fraction == 0.0 || self.fraction >= 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioOptions {
    pub completion: Completion,
    pub solver: SolverConfig,
    /// Output pixels `J` the distortion is restricted to; `None` uses the
    /// missing building.
    pub region: Option<Vec<usize>>,
}

impl Default for RadioOptions {
    fn default() -> Self {
        Self {
            completion: Completion::Inpaint,
            solver: SolverConfig {
                kind: SolverKind::Pursuit,
                budget: Some(5),
                samples: 16,
                ..SolverConfig::default()
            },
            region: None,
        }
    }
}

/// A selected block, named by what it is in the world.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadioBlock {
    /// Index into the world's building list.
    Building { index: usize },
    /// Row-major pixel of the measurement.
    Measurement { location: usize },
}

/// The pursuit problem: visible buildings, then measurements in ascending
/// location order, so block indices never depend on how the world lists
/// its measurements.
pub struct RadioProblem {
    pub representation: Arc<GroupedStructural>,
    pub problem: ProblemSet,
    pub blocks: Vec<RadioBlock>,
    pub region: Vec<usize>,
}

pub fn radio_problem(
    world: &RadioToyWorld,
    model: Arc<dyn Model>,
    predictor: Option<Arc<dyn MapPredictor>>,
    opts: &RadioOptions,
) -> Result<RadioProblem> {
    let n = world.side();
    let region = match &opts.region {
        Some(j) => j.clone(),
        None => world
            .missing_building()
            .map(|b| b.pixels(n))
            .ok_or_else(|| invalid("world has no missing building and no region was given"))?,
    };
    if region.is_empty() {
        return Err(invalid("region of interest is empty"));
    }
    let visible: Vec<usize> = (0..world.buildings.len()).filter(|&i| Some(i) != world.missing).collect();
    let mut locations = world.measurements.clone();
    locations.sort_unstable();
    let repr = Arc::new(GroupedStructural::new(
        visible.iter().map(|&i| world.buildings[i].pixels(n)).collect(),
        locations.clone(),
        n,
        n,
        world.tx_map(),
    )?);
    let signal = simulate_radio(world)?.input;
    let coefficients = repr.analyze(&signal)?;
    let pert = Arc::new(RadioCompletion::new(repr.clone(), world.tx_map(), predictor, opts.completion)?);
    let problem = Problem::with_coefficients(
        signal,
        coefficients,
        repr.clone(),
        pert,
        model,
        Distortion::SubsetL2 {
            indices: Some(region.clone()),
        },
    )?;
    let blocks = visible
        .into_iter()
        .map(|index| RadioBlock::Building { index })
        .chain(locations.into_iter().map(|location| RadioBlock::Measurement { location }))
        .collect();
    Ok(RadioProblem {
        representation: repr,
        problem: ProblemSet::from(problem),
        blocks,
        region,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RadioExplanation {
    pub result: ExplanationResult,
    pub selection: Vec<RadioBlock>,
    pub region: Vec<usize>,
    pub completion: Completion,
}

/// Greedy pursuit over buildings and measurements for the distortion on
/// the region of interest.
pub fn run_radio_pursuit(
    world: &RadioToyWorld,
    model: Arc<dyn Model>,
    predictor: Option<Arc<dyn MapPredictor>>,
    opts: &RadioOptions,
) -> Result<RadioExplanation> {
    let rp = radio_problem(world, model, predictor, opts)?;
    let cfg = SolverConfig {
        kind: SolverKind::Pursuit,
        ..opts.solver.clone()
    };
    let result = matching_pursuit(&rp.problem, &cfg)?;
    Ok(RadioExplanation {
        selection: result.selection_order.iter().map(|&b| rp.blocks[b]).collect(),
        result,
        region: rp.region,
        completion: opts.completion,
    })
}

/// The single block (or none) minimizing the distortion, by enumeration.
pub fn first_step_oracle(rp: &RadioProblem, cfg: &SolverConfig) -> Result<Option<RadioBlock>> {
    let k = rp.problem.num_blocks();
    let mut best = rp.problem.estimate(&Mask::zeros(k), cfg.samples, cfg.eval_seed)?.mean;
    let mut pick = None;
    for b in 0..k {
        let d = rp.problem.estimate(&Mask::from_support(k, &[b])?, cfg.samples, cfg.eval_seed)?.mean;
        if d < best {
            best = d;
            pick = Some(rp.blocks[b]);
        }
    }
    Ok(pick)
}

/// The same question answered by the generic oracle (only for small
/// block counts).
pub fn first_step_exhaustive(rp: &RadioProblem, cfg: &SolverConfig) -> Result<Option<RadioBlock>> {
    let (mask, _) = exhaustive_oracle(&rp.problem, 1, cfg)?;
    Ok(mask.support(0.5).first().map(|&b| rp.blocks[b]))
}

/// Map for display: selected buildings at 0.5, selected measurements at 1.
pub fn selection_map(world: &RadioToyWorld, selection: &[RadioBlock]) -> Vec<f64> {
    let n = world.side();
    let mut map = vec![0.0; n * n];
    for s in selection {
        match *s {
            RadioBlock::Building { index } => {
                for p in world.buildings[index].pixels(n) {
                    map[p] = 0.5;
                }
            }
            RadioBlock::Measurement { location } => map[location] = 1.0,
        }
    }
    map
}
