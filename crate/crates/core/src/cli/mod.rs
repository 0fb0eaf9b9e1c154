//! `tempee generate|train|eval|bench`.

mod bench;
mod commands;
mod run_config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigError;
use crate::data::{DataError, Regime};
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::tensor::TensorError;
use crate::training::TrainError;

pub use bench::{bench_rows, BenchRow, WallClock, BENCH_CSV_HEADER};
pub use commands::{cmd_eval, cmd_generate, cmd_train, sequence_path, MANIFEST_NAME};
pub use run_config::{RunConfig, RunPaths};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "TEMPEE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("corrupt input: {0}")]
    Corrupt(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Corrupt(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Format { .. } => CliError::Corrupt(e.to_string()),
            DataError::Io(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Format { .. } => CliError::Corrupt(e.to_string()),
            ModelError::Tensor(t) => t.into(),
            ModelError::Io(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numeric(_) => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Io(e) => e.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "tempee",
    version,
    about = "Radar echo extrapolation with parallel temporal and spatial transformers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic sequences and a train/val/test manifest.
    Generate(GenerateArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Score a checkpoint and write metric and curve CSVs.
    Eval(EvalArgs),
    /// Print analytic attention costs and wall-clock timings as CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic regime, e.g. `dense-stationary`.
    #[arg(long, value_parser = parse_regime)]
    pub regime: Regime,
    /// Train plus validation sequences, split 9:1.
    #[arg(long)]
    pub count: usize,
    /// Held-out test sequences; defaults to a tenth of `count`.
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Observed frames per sequence.
    #[arg(long, default_value_t = 20)]
    pub n_in: usize,
    /// Future frames per sequence.
    #[arg(long, default_value_t = 20)]
    pub k_out: usize,
    /// Frame edge in pixels.
    #[arg(long, default_value_t = 192)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config file; see the README for its sections.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A generated data directory or a single `.est` file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `report.csv` and `curves.csv`.
    #[arg(long)]
    pub report: PathBuf,
    /// Manifest partition to score when `--data` is a directory.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Thresholds in dBZ.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    /// Also compute the perceptual distance with this feature seed.
    #[arg(long)]
    pub perceptual_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub c: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub h: Vec<u64>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub w: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub gprime: Vec<u64>,
    /// Evaluate every combination of the given lists.
    #[arg(long)]
    pub sweep: bool,
    /// Level-1 window grid used for the timed MSTA forward.
    #[arg(long, default_value_t = 8)]
    pub g: u64,
    /// Largest attention matrix, in MiB, that the timed forwards may allocate.
    #[arg(long, default_value_t = 512)]
    pub mem_limit_mb: u64,
    /// Skip the wall-clock measurements.
    #[arg(long)]
    pub analytic_only: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_regime(s: &str) -> std::result::Result<Regime, String> {
    s.parse::<Regime>().map_err(|e| e.to_string())
}

/// Applies the thread cap from the environment. A malformed value is a
/// usage error.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "{THREADS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => bench::cmd_bench(&a),
    }
}
