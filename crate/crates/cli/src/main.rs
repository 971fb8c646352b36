use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{Failure, PredictorChoice};
use config::RunConfig;

/// Predictor-feedback control of input-delay systems with numerical and
/// neural-operator predictors.
#[derive(Parser)]
#[command(name = "delaycomp", version)]
struct Cli {
    /// Sectioned key = value config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One closed-loop run: trajectory.csv and metrics.txt.
    Simulate {
        #[arg(long, value_enum, default_value = "successive")]
        predictor: PredictorChoice,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Generate a training dataset.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        /// Also write the samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train a neural operator: model.nno and loss_history.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Dataset errors and closed-loop metrics of a trained model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Predictor latency over the delay × step-size grid.
    Bench {
        /// Trained models to time; grids without one use a random model.
        #[arg(long)]
        model: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Target-system and ISS-bound audit of closed-loop runs.
    Verify {
        #[arg(long, value_enum, default_value = "exact")]
        predictor: PredictorChoice,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn threads(cfg: &RunConfig) -> usize {
    std::env::var("DELAYCOMP_THREADS").ok().and_then(|v| v.parse().ok()).filter(|n| *n >= 1).unwrap_or(cfg.threads)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Failure::Setup(format!("config file not found: {}", path.display())));
            }
            RunConfig::load(path)
        }
        None => Ok(RunConfig::default()),
    }
    .map_err(|e| Failure::Setup(format!("config error: {e}")))?;
    match cli.command {
        Command::Simulate { predictor, model, out } => commands::simulate(&cfg, predictor, model.as_deref(), &out),
        Command::GenerateData { out, csv } => commands::generate_data(&cfg, threads(&cfg), &out, csv.as_deref()),
        Command::Train { data, out } => commands::train(&cfg, &data, &out),
        Command::Evaluate { model, data, out } => commands::evaluate(&cfg, &model, data.as_deref(), &out),
        Command::Bench { model, out } => commands::bench(&cfg, &model, &out),
        Command::Verify { predictor, model, out } => commands::verify(&cfg, predictor, model.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
