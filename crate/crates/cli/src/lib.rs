//! Experiment driver: data generation, detector training, patch population
//! training, PCA, reconstruction, evaluation and reporting, each as a
//! subcommand working inside one run directory.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plan;
pub mod report;
pub mod svg;
pub mod table;

pub use config::Config;
pub use plan::ExperimentPlan;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input data. Exit code 2.
    #[error("{0}")]
    Invalid(String),
    /// A required upstream artifact is missing or was changed. Exit code 3.
    #[error("{0}")]
    Stale(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] eigenpatch::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use eigenpatch::Error as E;
        match self {
            CliError::Invalid(_) => 2,
            CliError::Stale(_) => 3,
            CliError::Core(E::InvalidArgument(_) | E::Shape(_) | E::Parse { .. } | E::Text { .. }) => 2,
            CliError::Core(E::HashMismatch { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "eigenpatch", version, about = "Adversarial patch populations and their principal components")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run directory holding every artifact.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` config; defaults to the run's `config.txt`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for patch training.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Patch side relative to the longer box side at evaluation.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Component counts, e.g. `2,4,8,all`.
    #[arg(long)]
    pub k_list: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/val/attack/test splits.
    GenData(Common),
    /// Train the toy detector and regenerate ground truth for attack/test.
    TrainDetector(Common),
    /// Train the patch population described by a plan.
    TrainPatches {
        #[command(flatten)]
        common: Common,
        /// `default`, `full`, or a plan file.
        #[arg(long, default_value = "default")]
        plan: String,
    },
    /// Fit the principal components of the population.
    PcaFit(Common),
    /// Rebuild patches from k components and run the set-size sweep.
    Reconstruct(Common),
    /// Measure mAP with patches placed at the center of every box.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// none | trained | gray | pca | sweep | path to an .epch/.epset file.
        #[arg(long)]
        patch: Option<String>,
        /// Evaluate N evenly spaced gray patches.
        #[arg(long)]
        gray: Option<usize>,
    },
    /// Write tables and plots from the evaluation CSVs.
    Report(Common),
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Invalid(e.to_string())),
    };
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(c) => pipeline::gen_data(&c),
        Command::TrainDetector(c) => pipeline::train_detector(&c),
        Command::TrainPatches { common, plan } => pipeline::train_patches(&common, &plan),
        Command::PcaFit(c) => pipeline::pca_fit(&c),
        Command::Reconstruct(c) => pipeline::reconstruct(&c),
        Command::Evaluate { common, patch, gray } => {
            let mode = match (patch.as_deref(), gray) {
                (Some(_), Some(_)) => {
                    return Err(CliError::Invalid("pass either --patch or --gray, not both".into()))
                }
                (None, Some(n)) => pipeline::EvalMode::Gray(n),
                (Some(p), None) => pipeline::EvalMode::parse(p),
                (None, None) => pipeline::EvalMode::None,
            };
            pipeline::evaluate(&common, &mode)
        }
        Command::Report(c) => report::report(&c),
    }
}
