//! JSON run configuration and the dispatcher behind the command-line tool.
//!
//! Every run writes `result.json` into the output directory, echoing the
//! configuration and listing per-target masks, distortions and traces,
//! next to any PGM images and CSV tables it produced. Outputs contain no
//! timing information, so reruns of one config are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::audio::{
    audio_problem, frequency_table_csv, harmonic_signal, importance_table_csv, run_audio_query, AudioMode,
    AudioOptions, ImportanceRow, SpectralClassifier, AUDIO_LEN, SOUND_CLASSES,
};
use super::images::{
    cartoonx_problem, pixel_problem, run_cartoonx, run_pixel_rde, run_rd_scatter, synthetic_corpus, synthetic_image,
    train_shape_classifier, wavelet_dominance, ClassifierTraining, ImageRdeOptions, IMAGE_SIDE,
};
use super::io::{read_pgm, scatter_csv, write_json, write_mask_pgm, write_pgm};
use super::radio::{
    first_step_oracle, radio_problem, run_interpretation_training, run_radio_pursuit, selection_map,
    train_radio_model, Completion, RadioOptions, RadioTraining, DEFAULT_GAMMA,
};
use crate::error::{RdeError, Result};
use crate::models::{LineOfSightPredictor, MapPredictor, Network, RadioToyWorld, WorldConfig};
use crate::objective::{derive_seed, Model, ProblemSet};
use crate::solvers::{exhaustive_oracle, rd_curve, ExplanationResult, SolverConfig, SolverKind, Sweep};
use crate::types::{Mask, Signal};

fn config_error(msg: impl Into<String>) -> RdeError {
    RdeError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    PixelRde,
    Cartoonx,
    RdScatter,
    Audio,
    Radio,
    InterpretationTraining,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Hyperparameters as published.
    #[default]
    Published,
    /// Published hyperparameters with step and sample counts cut for desk runs.
    Desk,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticInput {
    pub count: usize,
    pub seed: u64,
    /// Restricts generated images or sounds to one class.
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Path(PathBuf),
    Paths(Vec<PathBuf>),
    Synthetic { synthetic: SyntheticInput },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

/// Frozen class index, or `"auto"` for the argmax of `Φ(x)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JStar {
    Index(usize),
    #[default]
    #[serde(deserialize_with = "auto_only", serialize_with = "write_auto")]
    Auto,
}

fn write_auto<S: serde::Serializer>(s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str("auto")
}

fn auto_only<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<(), D::Error> {
    let s = String::deserialize(d)?;
    if s == "auto" {
        Ok(())
    } else {
        Err(serde::de::Error::custom(format!("j_star must be an index or \"auto\", got {s:?}")))
    }
}

impl JStar {
    fn label(&self) -> Option<usize> {
        match self {
            JStar::Index(i) => Some(*i),
            JStar::Auto => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionConfig {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub j_star: JStar,
    #[serde(rename = "C", default = "default_scale")]
    pub scale: f64,
    #[serde(rename = "J", default)]
    pub subset: Option<Vec<usize>>,
}

fn default_scale() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub pipeline: PipelineKind,
    #[serde(default)]
    pub input: Option<InputSpec>,
    /// Weight-file path; audio also accepts `magnitude_only` and
    /// `phase_only`. Without one the pipeline trains its own model.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub representation: Option<Component>,
    #[serde(default)]
    pub obfuscation: Option<Component>,
    #[serde(default)]
    pub distortion: Option<DistortionConfig>,
    /// Overrides on top of the pipeline's default solver settings.
    #[serde(default)]
    pub solver: Option<Value>,
    /// Overrides on top of the pipeline's default training settings.
    #[serde(default)]
    pub training: Option<Value>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub preset: Preset,
    /// Seed for data generation and training.
    #[serde(default)]
    pub seed: u64,
    /// Interpretation-loss weight for training comparisons.
    #[serde(default)]
    pub gamma: Option<f64>,
    /// Number of seeds in a training comparison.
    #[serde(default)]
    pub seeds: Option<usize>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Applies a command-line seed to both data and solver seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        let mut solver = self.solver.take().unwrap_or_else(|| json!({}));
        if let Value::Object(m) = &mut solver {
            m.insert("seed".into(), json!(seed));
        }
        self.solver = Some(solver);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Train,
    Explain,
    Curve,
    Oracle,
    Radio,
    CompareTraining,
}

/// Serializes `base`, replaces the fields present in `patch` and reads
/// the result back.
fn overlay<T: Serialize + DeserializeOwned>(base: T, patch: Option<&Value>) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(base);
    };
    let Value::Object(fields) = patch else {
        return Err(config_error("overrides must be a JSON object"));
    };
    let mut value = serde_json::to_value(base)?;
    merge(&mut value, fields);
    serde_json::from_value(value).map_err(|e| config_error(e.to_string()))
}

fn merge(target: &mut Value, fields: &serde_json::Map<String, Value>) {
    if let Value::Object(t) = target {
        for (k, v) in fields {
            match (t.get_mut(k), v) {
                (Some(existing @ Value::Object(_)), Value::Object(inner)) => merge(existing, inner),
                _ => {
                    t.insert(k.clone(), v.clone());
                }
            }
        }
    }
}

fn param<T: DeserializeOwned>(c: &Component, key: &str, default: T) -> Result<T> {
    match c.params.get(key) {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| config_error(format!("{}.{key}: {e}", c.kind))),
        None => Ok(default),
    }
}

fn expect_kind<'a>(c: Option<&'a Component>, field: &str, allowed: &[&str]) -> Result<Option<&'a Component>> {
    match c {
        Some(c) if !allowed.contains(&c.kind.as_str()) => Err(config_error(format!(
            "{field} type {:?} is not valid here; expected one of {allowed:?}",
            c.kind
        ))),
        other => Ok(other),
    }
}

fn check_solver_kind(cfg: &SolverConfig, want: SolverKind, pipeline: PipelineKind) -> Result<()> {
    if cfg.kind != want {
        return Err(config_error(format!(
            "pipeline {pipeline:?} uses the {want:?} solver, config asks for {:?}",
            cfg.kind
        )));
    }
    Ok(())
}

/// Filled-in settings for the image pipelines.
fn image_options(cfg: &PipelineConfig) -> Result<ImageRdeOptions> {
    let (mut opts, repr, obf) = match cfg.pipeline {
        PipelineKind::PixelRde | PipelineKind::RdScatter => (ImageRdeOptions::pixel_rde(), "pixel", "gaussian"),
        PipelineKind::Cartoonx => (ImageRdeOptions::cartoonx(), "wavelet", "gaussian_per_scale"),
        other => return Err(config_error(format!("{other:?} is not an image pipeline"))),
    };
    if cfg.preset == Preset::Desk {
        opts = opts.desk();
    }
    if cfg.pipeline == PipelineKind::RdScatter {
        // both methods share one config, so the wavelet system is fixed here
        expect_kind(cfg.representation.as_ref(), "representation", &["pixel", "wavelet"])?;
        expect_kind(cfg.obfuscation.as_ref(), "obfuscation", &["gaussian", "gaussian_per_scale"])?;
    } else {
        expect_kind(cfg.representation.as_ref(), "representation", &[repr])?;
        expect_kind(cfg.obfuscation.as_ref(), "obfuscation", &[obf])?;
    }
    if let Some(r) = cfg.representation.as_ref().filter(|r| r.kind == "wavelet") {
        opts.wavelet_order = param(r, "order", opts.wavelet_order)?;
        opts.wavelet_levels = param(r, "levels", opts.wavelet_levels)?;
    }
    if let Some(d) = &cfg.distortion {
        if d.kind != "d1" {
            return Err(config_error(format!("image pipelines use the d1 distortion, got {:?}", d.kind)));
        }
        opts.scale = d.scale;
        opts.label = d.j_star.label();
    }
    opts.solver = overlay(opts.solver, cfg.solver.as_ref())?;
    check_solver_kind(&opts.solver, SolverKind::L1, cfg.pipeline)?;
    Ok(opts)
}

fn audio_options(cfg: &PipelineConfig) -> Result<AudioOptions> {
    let repr = expect_kind(cfg.representation.as_ref(), "representation", &["fourier_split", "fourier_per_frequency"])?;
    let mut opts = match repr.map(|r| r.kind.as_str()) {
        Some("fourier_per_frequency") => AudioOptions::per_frequency(),
        _ => AudioOptions::magnitude_vs_phase(),
    };
    if cfg.preset == Preset::Desk {
        opts = opts.desk();
    }
    let obf = match opts.mode {
        AudioMode::PerFrequency => "inpaint",
        AudioMode::MagnitudeVsPhase => "noise_signal",
    };
    if let Some(o) = expect_kind(cfg.obfuscation.as_ref(), "obfuscation", &[obf])? {
        if opts.mode == AudioMode::PerFrequency {
            opts.inpaint_noise = param(o, "noise_fraction", opts.inpaint_noise)?;
        }
    }
    if let Some(d) = &cfg.distortion {
        if d.kind != "d1" {
            return Err(config_error(format!("audio queries use the d1 distortion, got {:?}", d.kind)));
        }
        opts.scale = d.scale;
        opts.label = d.j_star.label();
    }
    opts.solver = overlay(opts.solver, cfg.solver.as_ref())?;
    check_solver_kind(&opts.solver, SolverKind::Bernoulli, cfg.pipeline)?;
    Ok(opts)
}

fn radio_options(cfg: &PipelineConfig) -> Result<RadioOptions> {
    let mut opts = RadioOptions::default();
    expect_kind(cfg.representation.as_ref(), "representation", &["grouped"])?;
    if let Some(o) = expect_kind(cfg.obfuscation.as_ref(), "obfuscation", &["zero_fill", "inpaint", "mixed"])? {
        opts.completion = match o.kind.as_str() {
            "zero_fill" => Completion::ZeroFill,
            "inpaint" => Completion::Inpaint,
            _ => Completion::Mixed {
                fraction: param(o, "fraction", 0.025)?,
            },
        };
    }
    if let Some(d) = &cfg.distortion {
        if d.kind != "subset_l2" {
            return Err(config_error(format!("radio pursuit uses the subset_l2 distortion, got {:?}", d.kind)));
        }
        opts.region = d.subset.clone();
    }
    opts.solver = overlay(opts.solver, cfg.solver.as_ref())?;
    check_solver_kind(&opts.solver, SolverKind::Pursuit, cfg.pipeline)?;
    Ok(opts)
}

fn classifier_training(cfg: &PipelineConfig) -> Result<ClassifierTraining> {
    overlay(ClassifierTraining::default(), cfg.training.as_ref())
}

fn radio_training(cfg: &PipelineConfig) -> Result<RadioTraining> {
    overlay(RadioTraining::default(), cfg.training.as_ref())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn input_paths(cfg: &PipelineConfig, base: &Path) -> Option<Vec<PathBuf>> {
    match &cfg.input {
        Some(InputSpec::Path(p)) => Some(vec![resolve(base, p)]),
        Some(InputSpec::Paths(ps)) => Some(ps.iter().map(|p| resolve(base, p)).collect()),
        _ => None,
    }
}

fn synthetic(cfg: &PipelineConfig) -> SyntheticInput {
    match &cfg.input {
        Some(InputSpec::Synthetic { synthetic }) => SyntheticInput {
            count: synthetic.count.max(1),
            ..synthetic.clone()
        },
        _ => SyntheticInput {
            count: 1,
            seed: cfg.seed,
            class: None,
        },
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn load_images(cfg: &PipelineConfig, base: &Path) -> Result<Vec<(String, Signal)>> {
    if let Some(paths) = input_paths(cfg, base) {
        return paths.iter().map(|p| Ok((stem(p), read_pgm(p)?))).collect();
    }
    let syn = synthetic(cfg);
    let images = match syn.class {
        Some(c) => (0..syn.count)
            .map(|i| synthetic_image(derive_seed(syn.seed, i as u64), c, IMAGE_SIDE))
            .collect::<Result<Vec<_>>>()?,
        None => synthetic_corpus(syn.count, syn.seed)?.into_iter().map(|(x, _)| x).collect(),
    };
    Ok(images.into_iter().enumerate().map(|(i, x)| (format!("img_{i:03}"), x)).collect())
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    fs::read_to_string(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| config_error(format!("{}: {e}", path.display()))))
        .collect()
}

fn load_sounds(cfg: &PipelineConfig, base: &Path) -> Result<Vec<(String, Signal)>> {
    if let Some(paths) = input_paths(cfg, base) {
        return paths.iter().map(|p| Ok((stem(p), Signal::vector(read_numbers(p)?)?))).collect();
    }
    let syn = synthetic(cfg);
    let class = syn.class.unwrap_or(0);
    (0..syn.count)
        .map(|i| {
            let x = harmonic_signal(derive_seed(syn.seed, i as u64), class, AUDIO_LEN)?;
            Ok((format!("{}_{i:03}", SOUND_CLASSES.get(class).copied().unwrap_or("sound")), x))
        })
        .collect()
}

fn load_worlds(cfg: &PipelineConfig, base: &Path) -> Result<Vec<(String, RadioToyWorld)>> {
    if let Some(paths) = input_paths(cfg, base) {
        return paths
            .iter()
            .map(|p| Ok((stem(p), serde_json::from_str(&fs::read_to_string(p)?)?)))
            .collect();
    }
    let syn = synthetic(cfg);
    (0..syn.count)
        .map(|i| {
            let w = RadioToyWorld::random(derive_seed(syn.seed, i as u64), &WorldConfig::default())?;
            Ok((format!("world_{i:03}"), w))
        })
        .collect()
}

/// The classifier from `model`, or a freshly trained one saved to
/// `out/model.json`.
fn image_model(cfg: &PipelineConfig, base: &Path, out: &Path, log: &mut Vec<String>) -> Result<Arc<Network>> {
    if let Some(m) = &cfg.model {
        return Ok(Arc::new(Network::load(&resolve(base, Path::new(m)))?));
    }
    let trained = train_shape_classifier(&classifier_training(cfg)?, cfg.seed)?;
    trained.network.save(&out.join("model.json"))?;
    log.push("model.json".into());
    Ok(Arc::new(trained.network))
}

fn radio_model(cfg: &PipelineConfig, base: &Path, out: &Path, log: &mut Vec<String>) -> Result<Arc<Network>> {
    if let Some(m) = &cfg.model {
        return Ok(Arc::new(Network::load(&resolve(base, Path::new(m)))?));
    }
    let trained = train_radio_model(&radio_training(cfg)?, cfg.seed)?;
    trained.network.save(&out.join("model.json"))?;
    log.push("model.json".into());
    Ok(Arc::new(trained.network))
}

fn audio_model(cfg: &PipelineConfig, base: &Path, n: usize) -> Result<Arc<dyn Model>> {
    Ok(match cfg.model.as_deref() {
        None | Some("magnitude_only") => Arc::new(SpectralClassifier::magnitude_only(n)?),
        Some("phase_only") => Arc::new(SpectralClassifier::phase_only(n)?),
        Some(path) => Arc::new(Network::load(&resolve(base, Path::new(path)))?),
    })
}

/// One explained target in `result.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub id: String,
    pub mask_path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(flatten)]
    pub result: ExplanationResult,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub extra: Value,
}

/// Files written by a run, relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub files: Vec<String>,
}

fn mask_csv(mask: &Mask) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["block", "value"])?;
    for (b, v) in mask.values().iter().enumerate() {
        w.write_record([b.to_string(), v.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

struct Writer<'a> {
    out: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn text(&mut self, name: &str, text: &str) -> Result<String> {
        fs::write(self.out.join(name), text)?;
        self.files.push(name.into());
        Ok(name.into())
    }

    fn mask_pgm(&mut self, name: &str, values: &[f64], h: usize, w: usize) -> Result<String> {
        write_mask_pgm(&self.out.join(name), values, h, w)?;
        self.files.push(name.into());
        Ok(name.into())
    }

    fn image_pgm(&mut self, name: &str, values: &[f64], h: usize, w: usize) -> Result<String> {
        write_pgm(&self.out.join(name), values, h, w, false)?;
        self.files.push(name.into());
        Ok(name.into())
    }

    fn result(mut self, command: Command, cfg: &PipelineConfig, body: Value) -> Result<RunSummary> {
        let mut doc = json!({ "command": command, "config": cfg });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        write_json(&self.out.join("result.json"), &doc)?;
        self.files.push("result.json".into());
        Ok(RunSummary { files: self.files })
    }
}

/// Executes `command` for `cfg`, resolving relative input paths against
/// `base` and writing everything into `out`.
pub fn run(command: Command, cfg: &PipelineConfig, base: &Path, out: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out)?;
    let mut w = Writer { out, files: vec![] };
    use PipelineKind as P;
    match (command, cfg.pipeline) {
        (Command::Train, P::PixelRde | P::Cartoonx | P::RdScatter) => {
            let t = train_shape_classifier(&classifier_training(cfg)?, cfg.seed)?;
            t.network.save(&out.join("model.json"))?;
            w.files.push("model.json".into());
            w.result(command, cfg, json!({ "model_path": "model.json", "metrics": t }))
        }
        (Command::Train, P::Radio | P::InterpretationTraining) => {
            let t = train_radio_model(&radio_training(cfg)?, cfg.seed)?;
            t.network.save(&out.join("model.json"))?;
            w.files.push("model.json".into());
            w.result(
                command,
                cfg,
                json!({
                    "model_path": "model.json",
                    "metrics": t.metrics,
                    "baseline_mse": t.baseline_mse,
                    "epoch_loss": t.epoch_loss,
                }),
            )
        }
        (Command::Explain, P::PixelRde | P::Cartoonx) => explain_images(cfg, base, &mut w).and_then(|b| w.result(command, cfg, b)),
        (Command::Explain, P::Audio) => explain_audio(cfg, base, &mut w).and_then(|b| w.result(command, cfg, b)),
        (Command::Curve, P::RdScatter) => {
            let opts = image_options(cfg)?;
            let images = load_images(cfg, base)?;
            let model = image_model(cfg, base, out, &mut w.files)?;
            let rows = run_rd_scatter(&images, model, &opts)?;
            let path = w.text("scatter.csv", &scatter_csv(&rows)?)?;
            w.result(
                command,
                cfg,
                json!({ "scatter_path": path, "rows": rows, "wavelet_dominance": wavelet_dominance(&rows) }),
            )
        }
        (Command::Curve, P::PixelRde | P::Cartoonx | P::Audio) => curve(cfg, base, &mut w).and_then(|b| w.result(command, cfg, b)),
        (Command::Oracle, P::PixelRde | P::Cartoonx | P::Audio | P::Radio) => {
            oracle(cfg, base, &mut w).and_then(|b| w.result(command, cfg, b))
        }
        (Command::Radio, P::Radio) => radio(cfg, base, &mut w).and_then(|b| w.result(command, cfg, b)),
        (Command::CompareTraining, P::InterpretationTraining | P::Radio) => {
            let opts = radio_training(cfg)?;
            let gamma = cfg.gamma.unwrap_or(DEFAULT_GAMMA);
            let seeds = cfg.seeds.unwrap_or(1).max(1);
            let mut rows = Vec::new();
            let mut table = csv::Writer::from_writer(vec![]);
            table.write_record(["seed", "model", "test_mse", "test_interpretation_loss"])?;
            for i in 0..seeds as u64 {
                let seed = cfg.seed + i;
                let (_, _, c) = run_interpretation_training(&opts, gamma, seed)?;
                for (name, m) in [("vanilla", c.vanilla), ("regularized", c.regularized)] {
                    table.write_record([
                        seed.to_string(),
                        name.to_string(),
                        m.test_mse.to_string(),
                        m.test_interpretation_loss.to_string(),
                    ])?;
                }
                rows.push(json!({ "seed": seed, "comparison": c }));
            }
            let bytes = table.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
            let path = w.text("comparison.csv", &String::from_utf8(bytes).expect("utf-8"))?;
            w.result(command, cfg, json!({ "gamma": gamma, "comparison_path": path, "seeds": rows }))
        }
        (c, p) => Err(config_error(format!("command {c:?} does not apply to pipeline {p:?}"))),
    }
}

fn explain_images(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<Value> {
    let opts = image_options(cfg)?;
    let images = load_images(cfg, base)?;
    let model = image_model(cfg, base, w.out, &mut w.files)?;
    let mut runs = Vec::new();
    for (i, (id, x)) in images.iter().enumerate() {
        let mut o = opts.clone();
        o.solver.seed = derive_seed(opts.solver.seed, i as u64);
        let record = if cfg.pipeline == PipelineKind::PixelRde {
            let e = run_pixel_rde(x, model.clone(), &o)?;
            let mask_path = w.mask_pgm(&format!("mask_{id}.pgm"), &e.image, e.height, e.width)?;
            RunRecord {
                id: id.clone(),
                mask_path,
                image_path: None,
                label: Some(e.label),
                result: e.result,
                extra: Value::Null,
            }
        } else {
            let e = run_cartoonx(x, model.clone(), &o)?;
            let mask_path = w.text(&format!("mask_{id}.csv"), &mask_csv(&e.result.mask)?)?;
            let image_path = w.image_pgm(&format!("cartoonx_{id}.pgm"), &e.image, e.height, e.width)?;
            RunRecord {
                id: id.clone(),
                mask_path,
                image_path: Some(image_path),
                label: Some(e.label),
                result: e.result,
                extra: Value::Null,
            }
        };
        runs.push(record);
    }
    Ok(json!({ "runs": runs }))
}

fn explain_audio(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<Value> {
    let opts = audio_options(cfg)?;
    let sounds = load_sounds(cfg, base)?;
    let n = sounds.first().map(|(_, x)| x.len()).ok_or_else(|| config_error("no input signals"))?;
    let model = audio_model(cfg, base, n)?;
    let mut runs = Vec::new();
    match opts.mode {
        AudioMode::MagnitudeVsPhase => {
            let signals: Vec<Signal> = sounds.iter().map(|(_, x)| x.clone()).collect();
            let e = run_audio_query(&signals, model, &opts)?;
            let (m, p) = e.magnitude_phase().expect("split query has two blocks");
            let name = match &cfg.input {
                Some(InputSpec::Synthetic { synthetic }) => {
                    SOUND_CLASSES.get(synthetic.class.unwrap_or(0)).copied().unwrap_or("class").to_string()
                }
                _ => "input".to_string(),
            };
            let table = importance_table_csv(&[ImportanceRow {
                instrument: name.clone(),
                magnitude_importance: m,
                phase_importance: p,
            }])?;
            let mask_path = w.text("importance.csv", &table)?;
            runs.push(RunRecord {
                id: name,
                mask_path,
                image_path: None,
                label: None,
                extra: json!({ "labels": e.labels }),
                result: e.result,
            });
        }
        AudioMode::PerFrequency => {
            for (i, (id, x)) in sounds.iter().enumerate() {
                let mut o = opts.clone();
                o.solver.seed = derive_seed(opts.solver.seed, i as u64);
                let e = run_audio_query(std::slice::from_ref(x), model.clone(), &o)?;
                let mask_path = w.text(&format!("frequencies_{id}.csv"), &frequency_table_csv(e.result.mask.values())?)?;
                runs.push(RunRecord {
                    id: id.clone(),
                    mask_path,
                    image_path: None,
                    label: e.labels.first().copied(),
                    result: e.result,
                    extra: Value::Null,
                });
            }
        }
    }
    Ok(json!({ "runs": runs }))
}

/// The problem set a curve or oracle command works on, one per target.
fn problems(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<(Vec<(String, ProblemSet)>, SolverConfig)> {
    match cfg.pipeline {
        PipelineKind::PixelRde | PipelineKind::Cartoonx => {
            let opts = image_options(cfg)?;
            let images = load_images(cfg, base)?;
            let model = image_model(cfg, base, w.out, &mut w.files)?;
            let sets = images
                .into_iter()
                .map(|(id, x)| {
                    let p = if cfg.pipeline == PipelineKind::PixelRde {
                        pixel_problem(&x, model.clone(), &opts)?.1
                    } else {
                        cartoonx_problem(&x, model.clone(), &opts)?.2
                    };
                    Ok((id, ProblemSet::from(p)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((sets, opts.solver))
        }
        PipelineKind::Audio => {
            let opts = audio_options(cfg)?;
            let sounds = load_sounds(cfg, base)?;
            let n = sounds.first().map(|(_, x)| x.len()).ok_or_else(|| config_error("no input signals"))?;
            let model = audio_model(cfg, base, n)?;
            let sets = match opts.mode {
                AudioMode::MagnitudeVsPhase => {
                    let signals: Vec<Signal> = sounds.into_iter().map(|(_, x)| x).collect();
                    vec![("class".to_string(), audio_problem(&signals, model, &opts)?.1)]
                }
                AudioMode::PerFrequency => sounds
                    .into_iter()
                    .map(|(id, x)| Ok((id, audio_problem(&[x], model.clone(), &opts)?.1)))
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok((sets, opts.solver))
        }
        other => Err(config_error(format!("no generic problem for pipeline {other:?}"))),
    }
}

fn curve(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<Value> {
    let sweep = cfg.sweep.clone().ok_or_else(|| config_error("curve needs a sweep"))?;
    let (sets, template) = problems(cfg, base, w)?;
    let mut table = csv::Writer::from_writer(vec![]);
    table.write_record(["image_id", "value", "l1_normalized", "distortion_mean", "distortion_stderr"])?;
    let mut points = Vec::new();
    for (id, set) in &sets {
        for p in rd_curve(set, &template, &sweep)? {
            table.write_record([
                id.clone(),
                p.value.to_string(),
                p.l1_normalized.to_string(),
                p.distortion.mean.to_string(),
                p.distortion.std_error.to_string(),
            ])?;
            points.push(json!({ "id": id, "value": p.value, "l1_normalized": p.l1_normalized, "distortion": p.distortion, "trace": p.result.trace }));
        }
    }
    let bytes = table.into_inner().map_err(|e| RdeError::Io(e.into_error()))?;
    let path = w.text("curve.csv", &String::from_utf8(bytes).expect("utf-8"))?;
    Ok(json!({ "curve_path": path, "points": points }))
}

fn oracle(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<Value> {
    if cfg.pipeline == PipelineKind::Radio {
        let opts = radio_options(cfg)?;
        let worlds = load_worlds(cfg, base)?;
        let model: Arc<dyn Model> = radio_model(cfg, base, w.out, &mut w.files)?;
        let mut picks = Vec::new();
        for (id, world) in &worlds {
            let predictor: Arc<dyn MapPredictor> = Arc::new(LineOfSightPredictor {
                propagation: world.propagation,
            });
            let rp = radio_problem(world, model.clone(), Some(predictor), &opts)?;
            picks.push(json!({ "id": id, "first_step": first_step_oracle(&rp, &opts.solver)? }));
        }
        return Ok(json!({ "oracle": picks }));
    }
    let (sets, solver) = problems(cfg, base, w)?;
    let mut runs = Vec::new();
    for (id, set) in &sets {
        let budget = solver.budget.unwrap_or(set.num_blocks());
        let (mask, distortion) = exhaustive_oracle(set, budget, &solver)?;
        let mask_path = w.text(&format!("oracle_{id}.csv"), &mask_csv(&mask)?)?;
        runs.push(json!({ "id": id, "budget": budget, "mask_path": mask_path, "mask": mask, "distortion": distortion }));
    }
    Ok(json!({ "runs": runs }))
}

fn radio(cfg: &PipelineConfig, base: &Path, w: &mut Writer) -> Result<Value> {
    let opts = radio_options(cfg)?;
    let worlds = load_worlds(cfg, base)?;
    let model = radio_model(cfg, base, w.out, &mut w.files)?;
    let mut runs = Vec::new();
    for (i, (id, world)) in worlds.iter().enumerate() {
        let mut o = opts.clone();
        o.solver.seed = derive_seed(opts.solver.seed, i as u64);
        let predictor: Arc<dyn MapPredictor> = Arc::new(LineOfSightPredictor {
            propagation: world.propagation,
        });
        let e = run_radio_pursuit(world, model.clone(), Some(predictor), &o)?;
        let n = world.side();
        let mask_path = w.mask_pgm(&format!("selection_{id}.pgm"), &selection_map(world, &e.selection), n, n)?;
        let estimate = model.forward(&crate::models::simulate_radio(world)?.input)?;
        let image_path = w.image_pgm(&format!("estimate_{id}.pgm"), &estimate, n, n)?;
        runs.push(RunRecord {
            id: id.clone(),
            mask_path,
            image_path: Some(image_path),
            label: None,
            extra: json!({ "selection": e.selection, "region": e.region, "completion": e.completion }),
            result: e.result,
        });
    }
    Ok(json!({ "runs": runs }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = PipelineConfig::from_json(
            r#"{
                "pipeline": "cartoonx",
                "input": {"synthetic": {"count": 2, "seed": 5}},
                "model": "weights.json",
                "representation": {"type": "wavelet", "params": {"order": 2, "levels": 3}},
                "obfuscation": {"type": "gaussian_per_scale"},
                "distortion": {"type": "d1", "j_star": "auto", "C": 50},
                "solver": {"type": "l1", "steps": 10, "lambda": 2.0}
            }"#,
        )
        .unwrap();
        let o = image_options(&cfg).unwrap();
        assert_eq!((o.wavelet_order, o.wavelet_levels, o.scale, o.label), (2, 3, 50.0, None));
        assert_eq!((o.solver.steps, o.solver.lambda, o.solver.lr), (10, 2.0, 0.003));
    }

    #[test]
    fn solver_overrides_keep_pipeline_defaults() {
        let cfg = PipelineConfig::from_json(r#"{"pipeline": "cartoonx", "solver": {"steps": 5}}"#).unwrap();
        assert_eq!(image_options(&cfg).unwrap().solver.lambda, 3.0);
        let cfg = PipelineConfig::from_json(r#"{"pipeline": "audio", "preset": "desk"}"#).unwrap();
        let a = audio_options(&cfg).unwrap();
        assert_eq!((a.mode, a.solver.lambda, a.solver.steps), (AudioMode::MagnitudeVsPhase, 30.0, 2000));
    }

    #[test]
    fn j_star_forms() {
        let d: DistortionConfig = serde_json::from_str(r#"{"type": "d1", "j_star": 3}"#).unwrap();
        assert_eq!((d.j_star.label(), d.scale), (Some(3), 100.0));
        assert!(serde_json::from_str::<DistortionConfig>(r#"{"type": "d1", "j_star": "best"}"#).is_err());
        let auto: DistortionConfig = serde_json::from_str(r#"{"type": "d1"}"#).unwrap();
        let text = serde_json::to_string(&auto).unwrap();
        assert!(text.contains(r#""j_star":"auto""#));
        assert_eq!(serde_json::from_str::<DistortionConfig>(&text).unwrap(), auto);
    }

    #[test]
    fn invalid_combinations_rejected() {
        for text in [
            r#"{"pipeline": "pixel_rde", "representation": {"type": "wavelet"}}"#,
            r#"{"pipeline": "pixel_rde", "solver": {"type": "pursuit"}}"#,
            r#"{"pipeline": "radio", "distortion": {"type": "d1"}}"#,
            r#"{"pipeline": "audio", "representation": {"type": "fourier_split"}, "obfuscation": {"type": "inpaint"}}"#,
        ] {
            let cfg = PipelineConfig::from_json(text).unwrap();
            let r = match cfg.pipeline {
                PipelineKind::Radio => radio_options(&cfg).map(|_| ()),
                PipelineKind::Audio => audio_options(&cfg).map(|_| ()),
                _ => image_options(&cfg).map(|_| ()),
            };
            assert!(r.is_err(), "{text}");
        }
        assert!(PipelineConfig::from_json(r#"{"pipeline": "tomography"}"#).is_err());
    }

    #[test]
    fn radio_mixed_fraction_recorded() {
        let cfg = PipelineConfig::from_json(
            r#"{"pipeline": "radio", "obfuscation": {"type": "mixed", "params": {"fraction": 0.025}}}"#,
        )
        .unwrap();
        assert_eq!(radio_options(&cfg).unwrap().completion, Completion::Mixed { fraction: 0.025 });
    }

    #[test]
    fn seed_override_reaches_solver() {
        let mut cfg = PipelineConfig::from_json(r#"{"pipeline": "pixel_rde", "solver": {"steps": 3}}"#).unwrap();
        cfg.override_seed(42);
        let o = image_options(&cfg).unwrap();
        assert_eq!((cfg.seed, o.solver.seed, o.solver.steps), (42, 42, 3));
    }

    #[test]
    fn command_pipeline_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::from_json(r#"{"pipeline": "audio"}"#).unwrap();
        assert!(run(Command::Radio, &cfg, dir.path(), dir.path()).is_err());
    }

    #[test]
    fn audio_split_run_is_deterministic() {
        let text = r#"{
            "pipeline": "audio",
            "input": {"synthetic": {"count": 2, "seed": 3, "class": 0}},
            "model": "magnitude_only",
            "preset": "desk",
            "solver": {"steps": 50, "samples": 2}
        }"#;
        let cfg = PipelineConfig::from_json(text).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let sa = run(Command::Explain, &cfg, a.path(), a.path()).unwrap();
        run(Command::Explain, &cfg, b.path(), b.path()).unwrap();
        assert_eq!(sa.files, vec!["importance.csv", "result.json"]);
        for f in &sa.files {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
        let doc: Value = serde_json::from_str(&fs::read_to_string(a.path().join("result.json")).unwrap()).unwrap();
        assert_eq!(doc["runs"][0]["trace"].as_array().unwrap().len(), 50);
        assert_eq!(doc["config"]["pipeline"], "audio");
    }
}
