use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rde::pipelines::config::{run, Command, PipelineConfig};

/// Rate-distortion explanations for classifiers, sound models and radio maps.
#[derive(Parser)]
#[command(name = "rde", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the model a pipeline explains and save its weights.
    Train(RunArgs),
    /// Compute a relevance mask for each input.
    Explain(RunArgs),
    /// Sweep λ or the budget, or build the pixel-versus-wavelet scatter.
    Curve(RunArgs),
    /// Brute-force the best mask over small block counts.
    Oracle(RunArgs),
    /// Greedy pursuit explanations of radio-map estimates.
    Radio(RunArgs),
    /// Train with and without the interpretation loss and compare.
    CompareTraining(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the data and solver seeds of the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Explain(a) => (Command::Explain, a),
        Cmd::Curve(a) => (Command::Curve, a),
        Cmd::Oracle(a) => (Command::Oracle, a),
        Cmd::Radio(a) => (Command::Radio, a),
        Cmd::CompareTraining(a) => (Command::CompareTraining, a),
    };
    let outcome = PipelineConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(seed) = args.seed {
            cfg.override_seed(seed);
        }
        let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
        run(command, &cfg, &base, &args.out)
    });
    match outcome {
        Ok(summary) => {
            for f in summary.files {
                println!("{}", args.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
