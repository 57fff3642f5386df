//! Acceptance criteria. Each test prints one `criterion N ... PASS|FAIL`
//! line and fails when its criterion is not met, including its time limit.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rde::distortions::{d1_presoftmax, d2_postsoftmax, d_subset_l2, softmax, Distortion};
use rde::models::{
    finite_diff_check_network, CheckStatus, LayerSpec, LineOfSightPredictor, MapPredictor, Network, RadioToyWorld,
    Task, WorldConfig,
};
use rde::obfuscations::ConstantPerturbation;
use rde::objective::{derive_seed, Model, Problem, ProblemSet};
use rde::pipelines::audio::{
    audio_problem, harmonic_signal, penalized_oracle, run_audio_query, AudioOptions, SpectralClassifier, AUDIO_LEN,
};
use rde::pipelines::config::{run, Command, PipelineConfig};
use rde::pipelines::images::{
    run_rd_scatter, synthetic_corpus, train_shape_classifier, wavelet_dominance, ClassifierTraining, ImageRdeOptions,
};
use rde::pipelines::radio::{
    first_step_oracle, radio_problem, run_interpretation_training, run_radio_pursuit, train_radio_model, Completion,
    RadioBlock, RadioOptions, RadioTraining, DEFAULT_GAMMA,
};
use rde::representations::{dft_forward, dft_inverse, dwt_forward, dwt_inverse, PixelGroups, WaveletSpec};
use rde::solvers::{concrete_sample, exhaustive_oracle, matching_pursuit, solve_l1, SolverConfig, SolverKind};
use rde::types::{Shape, Signal};

fn report(n: usize, name: &str, ok: bool, detail: String, elapsed: Duration, limit: Option<Duration>) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = ok && in_time;
    let limit = limit.map(|l| format!(" / limit {:.0}s", l.as_secs_f64())).unwrap_or_default();
    // straight to stdout so the line shows even when test output is captured
    writeln!(
        std::io::stdout(),
        "criterion {n} {name}: {} ({detail}; {:.2}s{limit})",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    )
    .unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(1e-300)).sqrt()
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let models = [
        ("linear", (12, 1, 1), vec![LayerSpec::Dense { output: 4 }]),
        (
            "mlp",
            (12, 1, 1),
            vec![LayerSpec::Dense { output: 16 }, LayerSpec::Relu, LayerSpec::Dense { output: 4 }],
        ),
        (
            "conv",
            (1, 8, 8),
            vec![
                LayerSpec::Conv2d {
                    out_channels: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    dilation: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { output: 4 },
            ],
        ),
    ];
    let mut worst = 0.0f64;
    let mut failures = 0;
    let mut skipped = 0;
    for (m, (name, dims, specs)) in models.iter().enumerate() {
        let net = Network::init(Task::Regression, *dims, specs, 10 + m as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + m as u64);
        let mut smooth = 0;
        while smooth < 100 {
            let x = Signal::vector(gaussian(&mut rng, net.input_len())).unwrap();
            let r = finite_diff_check_network(&net, &x, 1e-4, 1e-5).unwrap();
            match r.status {
                // a relu switches inside the stencil: not a smooth point
                CheckStatus::NonSmooth => skipped += 1,
                status => {
                    smooth += 1;
                    worst = worst.max(r.max_relative_error);
                    if status == CheckStatus::Fail {
                        failures += 1;
                        eprintln!("{name}: relative error {}", r.max_relative_error);
                    }
                }
            }
        }
    }
    report(
        1,
        "gradient correctness",
        failures == 0 && worst <= 1e-4,
        format!("300 smooth points, max relative error {worst:.2e}, {skipped} kinked points redrawn"),
        start.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn criterion_02_transform_round_trips() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut dft_err = 0.0f64;
    let mut parseval_err = 0.0f64;
    for &n in &[8usize, 16, 31, 64, 100, 256] {
        for _ in 0..5 {
            let v = gaussian(&mut rng, n);
            let x = Signal::vector(v.clone()).unwrap();
            let h = dft_forward(&x).unwrap();
            let back = dft_inverse(&h).unwrap();
            dft_err = dft_err.max(rel_l2(back.signal.values(), &v));
            let energy: f64 = v.iter().map(|a| a * a).sum();
            let spectral: f64 = (0..n).map(|j| h.block(j)[0].powi(2)).sum::<f64>() / n as f64;
            parseval_err = parseval_err.max((energy - spectral).abs() / energy);
        }
    }
    let mut dwt_err = 0.0f64;
    for order in 1..=3 {
        for levels in 1..=3 {
            for shape in [Shape::image(32, 32, 1), Shape::image(17, 23, 1), Shape::image(16, 16, 3)] {
                let spec = WaveletSpec::daubechies(order, levels);
                let v = gaussian(&mut rng, shape.len());
                let x = Signal::new(v.clone(), shape.clone()).unwrap();
                let h = dwt_forward(&x, spec).unwrap();
                let back = dwt_inverse(&h, spec, shape).unwrap();
                dwt_err = dwt_err.max(rel_l2(back.values(), &v));
            }
        }
    }
    report(
        2,
        "transform round trips",
        dft_err <= 1e-8 && dwt_err <= 1e-8 && parseval_err <= 1e-8,
        format!("DFT {dft_err:.1e}, DWT {dwt_err:.1e}, Parseval {parseval_err:.1e}"),
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

/// `Φ(x) = ⟨w, x⟩` at `x = 1` with zero fill and squared ℓ2 distortion.
fn linear_problem(w: &[f64]) -> ProblemSet {
    let n = w.len();
    let net = Network::new(
        Task::Regression,
        (n, 1, 1),
        vec![rde::models::Layer::dense(n, 1, w.to_vec(), vec![0.0]).unwrap()],
    )
    .unwrap();
    Problem::new(
        Signal::vector(vec![1.0; n]).unwrap(),
        Arc::new(PixelGroups::identity(Shape::Vector(n), 1).unwrap()),
        Arc::new(ConstantPerturbation { value: 0.0 }),
        Arc::new(net),
        Distortion::squared_l2(),
    )
    .unwrap()
    .into()
}

#[test]
fn criterion_03_oracle_equivalence() {
    let start = Instant::now();
    let (k, instances) = (10, 20);
    let mut pursuit_hits = 0;
    let mut l1_hits = 0;
    let mut first_hits = 0;
    for i in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i);
        let mut w = vec![0.0; k];
        for j in sample(&mut rng, k, 3) {
            w[j] = rng.random_range(1.0..3.0);
        }
        let set = linear_problem(&w);
        let base = SolverConfig {
            samples: 1,
            ..SolverConfig::default()
        };
        let (oracle3, _) = exhaustive_oracle(&set, 3, &base).unwrap();
        let (oracle1, _) = exhaustive_oracle(&set, 1, &base).unwrap();
        let pursuit = |budget| {
            let cfg = SolverConfig {
                kind: SolverKind::Pursuit,
                budget: Some(budget),
                ..base.clone()
            };
            matching_pursuit(&set, &cfg).unwrap().mask
        };
        pursuit_hits += (pursuit(3).support(0.5) == oracle3.support(0.5)) as usize;
        first_hits += (pursuit(1).support(0.5) == oracle1.support(0.5)) as usize;
        let l1 = solve_l1(
            &set,
            &SolverConfig {
                lambda: 0.1,
                lr: 0.01,
                steps: 1000,
                ..base.clone()
            },
        )
        .unwrap();
        l1_hits += (l1.mask.support(0.5) == oracle3.support(0.5)) as usize;
    }
    let n = instances as f64;
    let (p, l, f) = (pursuit_hits as f64 / n, l1_hits as f64 / n, first_hits as f64 / n);
    report(
        3,
        "oracle equivalence",
        p >= 0.95 && l >= 0.9 && f == 1.0,
        format!("pursuit {p:.2}, thresholded l1 {l:.2}, first pick {f:.2}"),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

#[test]
fn criterion_04_distortion_properties() {
    let start = Instant::now();
    let (a, b) = ([2.0, 0.0], [1.0, -1.0]);
    let d2 = d2_postsoftmax(&a, &b, 0).unwrap();
    let d1 = d1_presoftmax(&a, &b, 0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut shift_err = 0.0f64;
    for _ in 0..100 {
        let v = gaussian(&mut rng, 10);
        let c: f64 = rng.random_range(-50.0..50.0);
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for (p, q) in softmax(&v).iter().zip(softmax(&shifted)) {
            shift_err = shift_err.max((p - q).abs());
        }
    }
    let v = gaussian(&mut rng, 6);
    let zero = [
        d1_presoftmax(&v, &v, 2, 100.0).unwrap(),
        d2_postsoftmax(&v, &v, 2).unwrap(),
        d_subset_l2(&v, &v, &[0, 3, 5]).unwrap(),
        Distortion::squared_l2().evaluate(&v, &v).unwrap(),
    ];
    let zeros = zero.iter().all(|&d| d == 0.0);
    report(
        4,
        "distortion measure properties",
        d2.abs() < 1e-15 && d1 > 0.0 && shift_err <= 1e-12 && zeros,
        format!("d2 {d2:.1e}, d1 {d1:.3}, softmax shift {shift_err:.1e}, identical outputs {zero:?}"),
        start.elapsed(),
        Some(Duration::from_secs(1)),
    );
}

#[test]
fn criterion_05_concrete_relaxation() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 10_000;
    let mut worst = 0.0f64;
    let mut freqs = Vec::new();
    for theta in [0.1, 0.5, 0.9] {
        let hits = (0..draws)
            .filter(|_| concrete_sample(&[theta], 0.1, &mut rng).unwrap().values()[0] > 0.5)
            .count();
        let p = hits as f64 / draws as f64;
        worst = worst.max((p - theta).abs());
        freqs.push(p);
    }
    report(
        5,
        "concrete relaxation",
        worst <= 0.02,
        format!("P(s > 0.5) = {freqs:?}, max deviation {worst:.4}"),
        start.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

#[test]
fn criterion_06_scaled_wavelet_scatter() {
    let start = Instant::now();
    let trained = train_shape_classifier(&ClassifierTraining::default(), 0).unwrap();
    let corpus: Vec<(String, Signal)> = synthetic_corpus(20, 606)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, (x, _))| (format!("img_{i:03}"), x))
        .collect();
    // one shared config for both methods, desk step and sample counts
    let opts = ImageRdeOptions::pixel_rde().desk();
    let rows = run_rd_scatter(&corpus, Arc::new(trained.network), &opts).unwrap();
    let dominance = wavelet_dominance(&rows);
    report(
        6,
        "wavelet scatter",
        trained.test_accuracy >= 0.9 && dominance >= 0.8,
        format!(
            "test accuracy {:.3}, wavelet dominates on {:.0}% of 20 images",
            trained.test_accuracy,
            100.0 * dominance
        ),
        start.elapsed(),
        Some(Duration::from_secs(15 * 60)),
    );
}

#[test]
fn criterion_07_magnitude_vs_phase() {
    let start = Instant::now();
    let opts = AudioOptions::magnitude_vs_phase().desk();
    let mut details = Vec::new();
    let mut ok = true;
    let cases: [(&str, Arc<dyn Model>, usize, bool); 2] = [
        ("magnitude-only", Arc::new(SpectralClassifier::magnitude_only(AUDIO_LEN).unwrap()), 0, true),
        ("phase-only", Arc::new(SpectralClassifier::phase_only(AUDIO_LEN).unwrap()), 2, false),
    ];
    for (name, model, class, wants_magnitude) in cases {
        let signals: Vec<Signal> = (0..4)
            .map(|i| harmonic_signal(derive_seed(707, i), class, AUDIO_LEN).unwrap())
            .collect();
        let e = run_audio_query(&signals, model.clone(), &opts).unwrap();
        let (m, p) = e.magnitude_phase().unwrap();
        let (_, set) = audio_problem(&signals, model, &opts).unwrap();
        let oracle = penalized_oracle(&set, opts.solver.lambda, opts.solver.samples, opts.solver.eval_seed).unwrap();
        let (keep, drop) = if wants_magnitude { (m, p) } else { (p, m) };
        let expected = if wants_magnitude { [1.0, 0.0] } else { [0.0, 1.0] };
        let hard = [(m > 0.5) as u8 as f64, (p > 0.5) as u8 as f64];
        ok &= keep >= 0.9 && drop <= 0.1 && oracle.values() == expected && hard == expected;
        details.push(format!("{name}: θ_mag {m:.3}, θ_phase {p:.3}, oracle {:?}", oracle.values()));
    }
    report(
        7,
        "magnitude-vs-phase query",
        ok,
        details.join("; "),
        start.elapsed(),
        Some(Duration::from_secs(120)),
    );
}

#[test]
fn criterion_08_radio_pursuit() {
    let start = Instant::now();
    let trained = train_radio_model(&RadioTraining::default(), 7).unwrap();
    let model: Arc<dyn Model> = Arc::new(trained.network);
    let mut opts = RadioOptions {
        completion: Completion::Inpaint,
        ..RadioOptions::default()
    };
    opts.solver.budget = Some(1);
    let mut in_shadow = 0;
    let mut oracle_in_shadow = 0;
    let mut agree = 0;
    for i in 0..10 {
        let world = RadioToyWorld::random(derive_seed(12345, i), &WorldConfig::default()).unwrap();
        let predictor: Arc<dyn MapPredictor> = Arc::new(LineOfSightPredictor {
            propagation: world.propagation,
        });
        let shadow = world.shadow_region(&world.missing_building().unwrap());
        let inside = |b: Option<RadioBlock>| matches!(b, Some(RadioBlock::Measurement { location }) if shadow.contains(&location));
        let e = run_radio_pursuit(&world, model.clone(), Some(predictor.clone()), &opts).unwrap();
        let rp = radio_problem(&world, model.clone(), Some(predictor), &opts).unwrap();
        let oracle = first_step_oracle(&rp, &opts.solver).unwrap();
        let first = e.selection.first().copied();
        in_shadow += inside(first) as usize;
        oracle_in_shadow += inside(oracle) as usize;
        agree += (first == oracle) as usize;
    }
    report(
        8,
        "radio pursuit",
        in_shadow >= 8 && agree == 10,
        format!("first pick in shadow {in_shadow}/10, oracle in shadow {oracle_in_shadow}/10, pursuit = oracle {agree}/10"),
        start.elapsed(),
        Some(Duration::from_secs(300)),
    );
}

#[test]
fn criterion_09_interpretation_training() {
    let start = Instant::now();
    let opts = RadioTraining::default();
    let (mut vanilla, mut regularized) = (0.0, 0.0);
    // disjoint from the seeds used to pick γ
    let seeds = 100..105u64;
    for seed in seeds.clone() {
        let (_, _, c) = run_interpretation_training(&opts, DEFAULT_GAMMA, seed).unwrap();
        vanilla += c.vanilla.test_interpretation_loss;
        regularized += c.regularized.test_interpretation_loss;
    }
    let n = seeds.count() as f64;
    let (vanilla, regularized) = (vanilla / n, regularized / n);
    report(
        9,
        "interpretation-driven training",
        regularized <= vanilla,
        format!("mean held-out l_int: vanilla {vanilla:.5}, regularized {regularized:.5} (γ = {DEFAULT_GAMMA})"),
        start.elapsed(),
        Some(Duration::from_secs(600)),
    );
}

fn run_twice(command: Command, text: &str) -> (usize, Vec<String>) {
    let cfg = PipelineConfig::from_json(text).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files = run(command, &cfg, a.path(), a.path()).unwrap().files;
    let again = run(command, &cfg, b.path(), b.path()).unwrap().files;
    assert_eq!(files, again);
    let differing = files
        .iter()
        .filter(|f| read(a.path(), f) != read(b.path(), f))
        .cloned()
        .collect();
    (files.len(), differing)
}

fn read(dir: &Path, f: &str) -> Vec<u8> {
    fs::read(dir.join(f)).unwrap()
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let small_classifier = r#""training": {"train_images": 64, "test_images": 16, "train": {"epochs": 1}}"#;
    let small_regressor = r#""training": {"train_worlds": 8, "test_worlds": 4, "train": {"epochs": 1}}"#;
    let small_solver = r#""solver": {"steps": 20, "samples": 2}"#;
    let runs = [
        (Command::Train, format!(r#"{{"pipeline": "pixel_rde", {small_classifier}}}"#)),
        (
            Command::Explain,
            format!(r#"{{"pipeline": "pixel_rde", "input": {{"synthetic": {{"count": 2, "seed": 1}}}}, {small_classifier}, {small_solver}}}"#),
        ),
        (
            Command::Explain,
            format!(r#"{{"pipeline": "cartoonx", "input": {{"synthetic": {{"count": 2, "seed": 1}}}}, {small_classifier}, {small_solver}}}"#),
        ),
        (
            Command::Curve,
            format!(r#"{{"pipeline": "rd_scatter", "input": {{"synthetic": {{"count": 2, "seed": 1}}}}, {small_classifier}, {small_solver}}}"#),
        ),
        (
            Command::Curve,
            format!(
                r#"{{"pipeline": "pixel_rde", "input": {{"synthetic": {{"count": 1, "seed": 1}}}}, {small_classifier}, {small_solver},
                    "sweep": {{"parameter": "lambda", "values": [0.3, 3.0]}}}}"#
            ),
        ),
        (
            Command::Explain,
            r#"{"pipeline": "audio", "input": {"synthetic": {"count": 2, "seed": 1}}, "solver": {"steps": 30, "samples": 2}}"#.into(),
        ),
        (
            Command::Explain,
            r#"{"pipeline": "audio", "representation": {"type": "fourier_per_frequency"}, "solver": {"steps": 30, "samples": 2}}"#
                .into(),
        ),
        (
            Command::Oracle,
            r#"{"pipeline": "audio", "model": "phase_only", "solver": {"budget": 1, "samples": 4}}"#.into(),
        ),
        (
            Command::Radio,
            format!(r#"{{"pipeline": "radio", "input": {{"synthetic": {{"count": 1, "seed": 1}}}}, {small_regressor}, "solver": {{"budget": 2, "samples": 2}}}}"#),
        ),
        (
            Command::CompareTraining,
            format!(r#"{{"pipeline": "interpretation_training", "seeds": 2, {small_regressor}}}"#),
        ),
    ];
    let mut total = 0;
    let mut differing = Vec::new();
    for (command, text) in &runs {
        let (n, diff) = run_twice(*command, text);
        total += n;
        differing.extend(diff);
    }
    report(
        10,
        "determinism",
        differing.is_empty(),
        format!("{} runs, {total} output files compared, differing: {differing:?}", runs.len()),
        start.elapsed(),
        None,
    );
}
