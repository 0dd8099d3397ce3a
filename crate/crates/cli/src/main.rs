//! `flowbench`: generate, ingest, split, train, evaluate, roll out, profile and report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error(transparent)]
    Flow(#[from] flowbench::flowgen::FlowError),
    #[error(transparent)]
    Data(#[from] flowbench::datakit::DataError),
    #[error(transparent)]
    Op(#[from] flowbench::operators::OpError),
    #[error(transparent)]
    Train(#[from] flowbench::trainer::TrainError),
    #[error(transparent)]
    Bench(#[from] flowbench::bench::BenchError),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Parser)]
#[command(name = "flowbench", version, about = "Flow-dataset generation and neural-operator benchmarking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with [solver], [train], [model] and [profile] tables; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the cases of one problem and write one container per case.
    Gen {
        #[arg(long)]
        problem: String,
        /// Comma list of prop, bc, geo or all.
        #[arg(long = "subsets", alias = "subset", default_value = "all")]
        subsets: String,
        #[arg(long)]
        out: PathBuf,
        /// Grid as HxW, e.g. 64x64.
        #[arg(long)]
        resolution: Option<String>,
        /// Generate at most this many cases per subset.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Grid scattered point exports (`<id>.csv` with a `<id>.json` descriptor) into containers.
    Ingest {
        #[arg(long)]
        problem: String,
        /// Directory of exports.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Assign the cases under a dataset root to train/val/test and write split.json there.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and write a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "subsets", alias = "subset")]
        subsets: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Single-step metrics of a trained run (or `--model identity`) on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "model")]
        run: Option<PathBuf>,
        /// Only `identity` is accepted without a run.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long = "subsets", alias = "subset")]
        subsets: Option<String>,
        /// Pool errors over all cells instead of averaging per frame.
        #[arg(long)]
        pooled: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Multi-step rollout curves from the initial frame.
    Rollout {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "model")]
        run: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long = "subsets", alias = "subset")]
        subsets: Option<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter count, step time, memory and latency of a model.
    Profile {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "run")]
        model: Option<String>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Merge result tables and render rollout plots.
    Report {
        /// Comma list of results.csv files or directories holding one.
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
