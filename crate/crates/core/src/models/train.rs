use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, Network, Task};
use crate::distortions::{argmax, d_subset_l2, softmax};
use crate::error::{invalid, RdeError, Result};
use crate::objective::Model;
use crate::types::Signal;

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Label(usize),
    Values(Vec<f64>),
}

/// Inputs flagged for the interpretation regularizer carry their erased
/// counterpart `x̃` and the output region `J_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpretationTarget {
    pub erased: Vec<f64>,
    pub region: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Target,
    pub interpretation: Option<InterpretationTarget>,
}

impl Example {
    pub fn new(input: Vec<f64>, target: Target) -> Self {
        Self {
            input,
            target,
            interpretation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight of the interpretation loss; 0 disables it.
    #[serde(default)]
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.003,
            batch_size: 16,
            seed: 0,
            gamma: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    /// Mean objective per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Task loss and its gradient with respect to the output.
fn task_loss(task: Task, out: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
    match (task, target) {
        (Task::Classification, Target::Label(y)) => {
            if *y >= out.len() {
                return Err(invalid(format!("label {y} out of range for {} classes", out.len())));
            }
            let p = softmax(out);
            let loss = -p[*y].max(1e-300).ln();
            let mut g = p;
            g[*y] -= 1.0;
            Ok((loss, g))
        }
        (Task::Regression, Target::Values(t)) => {
            if t.len() != out.len() {
                return Err(RdeError::Shape(format!("target has {} values, model {}", t.len(), out.len())));
            }
            let m = out.len() as f64;
            let loss = out.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / m;
            let g = out.iter().zip(t).map(|(a, b)| 2.0 * (a - b) / m).collect();
            Ok((loss, g))
        }
        _ => Err(invalid("target kind does not match the model task")),
    }
}

/// `‖Φ_J(x) − Φ_J(x̃)‖₂²`.
pub fn interpretation_loss(model: &dyn Model, x: &Signal, region: &[usize], x_tilde: &Signal) -> Result<f64> {
    if region.is_empty() {
        return Err(invalid("interpretation region J_x is empty"));
    }
    d_subset_l2(&model.forward(x)?, &model.forward(x_tilde)?, region)
}

/// Minibatch Adam on the task loss plus `γ · ℓ_int` over flagged inputs.
/// Deterministic given `cfg.seed`.
pub fn train_model(net: &Network, data: &[Example], cfg: &TrainConfig) -> Result<(Network, TrainReport)> {
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let mut net = net.clone();
    let mut params = net.params();
    let mut adam = Adam::new(params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let task = net.task();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for &i in batch {
                let ex = &data[i];
                let acts = net.trace(&ex.input)?;
                let (l, g) = task_loss(task, acts.last().unwrap(), &ex.target)?;
                loss += l;
                net.backward(&acts, &g, Some(&mut grad))?;
                if let (Some(it), true) = (&ex.interpretation, cfg.gamma != 0.0) {
                    let erased = net.trace(&it.erased)?;
                    let a = acts.last().unwrap();
                    let b = erased.last().unwrap();
                    let mut ga = vec![0.0; a.len()];
                    let mut gb = vec![0.0; a.len()];
                    for &j in &it.region {
                        let diff = a[j] - b[j];
                        loss += cfg.gamma * diff * diff;
                        ga[j] = 2.0 * cfg.gamma * diff;
                        gb[j] = -ga[j];
                    }
                    net.backward(&acts, &ga, Some(&mut grad))?;
                    net.backward(&erased, &gb, Some(&mut grad))?;
                }
            }
            if !loss.is_finite() {
                return Err(RdeError::Diverged { epoch });
            }
            total += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad)?;
            net.set_params(&params)?;
        }
        report.epoch_loss.push(total / data.len() as f64);
    }
    Ok((net, report))
}

/// Fraction of examples whose argmax matches the label.
pub fn accuracy(net: &Network, data: &[Example]) -> Result<f64> {
    let mut correct = 0;
    for ex in data {
        if let Target::Label(y) = ex.target {
            if argmax(&net.evaluate(&ex.input)?) == y {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// Mean squared error over all outputs of all regression examples.
pub fn mean_squared_error(net: &Network, data: &[Example]) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ex in data {
        if let Target::Values(t) = &ex.target {
            let out = net.evaluate(&ex.input)?;
            acc += out.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += t.len();
        }
    }
    Ok(acc / n.max(1) as f64)
}
