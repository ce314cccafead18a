//! `mimil` — command-line front end for the CWS/CWNS classification toolkit.
//!
//! Subcommands cover the full pipeline: synthetic dataset generation,
//! featurization, training, evaluation, SHAP explanation, ridge feature
//! ranking, latency benchmarking, and line-oriented streaming inference.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod stream;

use clap::{Parser, Subcommand};
use mimil_core::Error;

#[derive(Parser)]
#[command(name = "mimil", version, about = "CWS vs. CWNS physiological arousal classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted patterns and ground truth.
    Generate(commands::GenerateArgs),
    /// Featurize recorded signals into a JSONL bag file.
    Featurize(commands::FeaturizeArgs),
    /// Train a model across seeds and write a run directory.
    Train(commands::TrainArgs),
    /// Re-score a finished run's stored models on its held-out test split.
    Evaluate(commands::EvaluateArgs),
    /// KernelSHAP attribution grids for individual windows.
    Explain(commands::ExplainArgs),
    /// Ridge-regression feature ranking.
    Rank(commands::RankArgs),
    /// Single-window inference latency benchmark.
    Bench(commands::BenchArgs),
    /// Streaming inference over line-delimited JSON.
    Stream(stream::StreamArgs),
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Parameter(_) | Error::Shape { .. } | Error::Serde(_) => 2,
        Error::Data(_) | Error::Io(_) => 3,
        Error::Numeric(_) => 4,
    }
}

/// Caps the global worker pool when MIMIL_THREADS is set.
fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("MIMIL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| Error::Parameter(format!("MIMIL_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(Error::Parameter("MIMIL_THREADS must be a positive integer".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Parameter(format!("failed to configure thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Featurize(args) => commands::featurize(args),
        Command::Train(args) => commands::train(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Explain(args) => commands::explain(args),
        Command::Rank(args) => commands::rank(args),
        Command::Bench(args) => commands::bench(args),
        Command::Stream(args) => stream::stream(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(exit_code(&error));
    }
}
