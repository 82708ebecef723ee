//! Batch command-line surface for the severity-index pipeline.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rindex_core::Error as CoreError;

/// Exit codes: 0 success, 2 argument, 3 data, 4 convergence, 5 io.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn argument(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: 3, message: message.into() }
    }

    pub fn convergence(message: impl Into<String>) -> Self {
        CliError { code: 4, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 5, message: message.into() }
    }
}

fn exit_code(e: &CoreError) -> u8 {
    match e {
        CoreError::InvalidArgument(_) | CoreError::Shape { .. } | CoreError::UndefinedMetric(_) => 2,
        CoreError::Data(_) | CoreError::CheckpointFormat(_) | CoreError::CheckpointVersion { .. } => 3,
        CoreError::Diverged { .. } => 4,
        CoreError::Replica { source, .. } => exit_code(source),
        CoreError::Io { .. } => 5,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(name = "rindex", version, about = "Severity-index models: generate cohorts, train, select, infer, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a semi-synthetic cohort with planted patterns.
    Generate {
        /// basic | large_overlap | scarce | noisy | mild
        #[arg(long, default_value = "basic")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for cohort.csv, truth.csv and manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = rindex_core::synthdata::DEFAULT_N_CN)]
        n_cn: usize,
        #[arg(long, default_value_t = rindex_core::synthdata::DEFAULT_N_PT)]
        n_pt: usize,
        #[arg(long, default_value_t = rindex_core::synthdata::DEFAULT_NUM_FEATURES)]
        num_features: usize,
    },
    /// Residualize covariates (when present) and standardize against the
    /// CN rows; writes the adjusted cohort and the fitted stats.
    Preprocess {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a cohort.
    Train {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cohort CSV (raw volumes); overrides the config's data.cohort.
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Output directory; falls back to the config's [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        num_patterns: Option<usize>,
    },
    /// Train a (M, lambda) grid with replicas, score agreement, select.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cohort: Option<PathBuf>,
        /// Output directory; falls back to the config's [output] dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Worker threads for replica training (0 = all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        num_patterns: Option<Vec<usize>>,
    },
    /// Apply a trained checkpoint to a cohort's PT rows.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        /// Persisted preprocessing stats from training time.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Set when the cohort file is already preprocessed.
        #[arg(long, default_value_t = false)]
        preprocessed: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concordance of inferred indices against planted truth.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional run configuration supplying cohort/truth paths.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        preprocessed: bool,
        /// Truth CSV; omitting it restricts the report to index summaries.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Optional CSV destination for the per-dimension breakdown.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runtime diagnostics of a trained model: separation lower bound and
    /// monotonicity spot checks on sampled latent pairs.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        preprocessed: bool,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { variant, seed, out, n_cn, n_pt, num_features } => {
            commands::generate::run(&variant, seed, &out, n_cn, n_pt, num_features)
        }
        Command::Preprocess { cohort, out } => commands::preprocess::run(&cohort, &out),
        Command::Train { config, cohort, out, seed, lambda, num_patterns } => {
            commands::train::run(config.as_deref(), cohort.as_deref(), out.as_deref(), seed, lambda, num_patterns)
        }
        Command::Sweep { config, cohort, out, replicas, workers, seed, lambda, num_patterns } => {
            commands::sweep::run(commands::sweep::Args {
                config: config.as_deref(),
                cohort: cohort.as_deref(),
                out: out.as_deref(),
                replicas,
                workers,
                seed,
                lambda_grid: lambda,
                m_grid: num_patterns,
            })
        }
        Command::Infer { checkpoint, cohort, stats, preprocessed, out } => {
            commands::infer::run(&checkpoint, &cohort, stats.as_deref(), preprocessed, &out)
        }
        Command::Evaluate { checkpoint, config, cohort, stats, preprocessed, truth, out } => {
            commands::evaluate::run(
                &checkpoint,
                config.as_deref(),
                cohort.as_deref(),
                stats.as_deref(),
                preprocessed,
                truth.as_deref(),
                out.as_deref(),
            )
        }
        Command::Diagnose { checkpoint, cohort, stats, preprocessed, samples, seed } => {
            commands::diagnose::run(&checkpoint, &cohort, stats.as_deref(), preprocessed, samples, seed)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
