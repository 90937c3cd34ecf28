//! Command-line harness: every experiment as a seeded subcommand that
//! writes its artifacts and a manifest into one run directory.

pub mod commands;
pub mod config;
pub mod data;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{load_config, parse_config, RunConfig, Seeds};
pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` has the wrong type: {message}")]
    Type { key: String, message: String },
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("could not serialize config: {0}")]
    Serialize(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("{0}")]
    Run(String),
    #[error("{0} of {1} theory checks failed")]
    ChecksFailed(usize, usize),
}

macro_rules! run_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        })*
    };
}

run_errors!(
    demixgan::train::TrainError,
    demixgan::nets::NetError,
    demixgan::nets::CheckpointError,
    demixgan::data::DataError,
    demixgan::corruption::CorruptionError,
    demixgan::eval::EvalError,
    demixgan::inversion::InversionError,
    demixgan::sensing::SensingError,
    demixgan::ica::IcaError,
    serde_json::Error
);

#[derive(Debug, Parser)]
#[command(name = "demixgan", version, about = "Denoising and demixing GAN experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Flags {
    /// TOML config file; omitted sections keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory (default `runs/<subcommand>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trained run directory or checkpoint directory (inversion subcommands).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Compute device; only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one generator against corrupted observations.
    TrainDenoise,
    /// Train two generators against mixtures.
    TrainDemix,
    /// Recover clean images from held-out corrupted ones.
    InvertDenoise,
    /// Separate held-out mixtures with two trained generators.
    InvertDemix,
    /// Compressed sensing with a trained generator as prior.
    CsInvert,
    /// Compressed sensing with the LASSO baseline.
    CsLasso,
    /// Separate held-out mixtures with FastICA.
    IcaDemix,
    /// Score estimate images against ground truth.
    EvalMetrics,
    /// Train the digit-classifier probe on MNIST.
    TrainClassifier,
    /// Run the finite-group identity suite.
    TheoryCheck,
    /// Write a derived corrupted dataset.
    MakeCorruption,
    /// Z-alignment and rotation sweeps for the demixing GAN.
    FailureAblation,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::TrainDenoise => "train-denoise",
            Self::TrainDemix => "train-demix",
            Self::InvertDenoise => "invert-denoise",
            Self::InvertDemix => "invert-demix",
            Self::CsInvert => "cs-invert",
            Self::CsLasso => "cs-lasso",
            Self::IcaDemix => "ica-demix",
            Self::EvalMetrics => "eval-metrics",
            Self::TrainClassifier => "train-classifier",
            Self::TheoryCheck => "theory-check",
            Self::MakeCorruption => "make-corruption",
            Self::FailureAblation => "failure-ablation",
        }
    }
}

/// Resolves config and seeds, runs the subcommand and writes the manifest.
pub fn run(command: Command, flags: &Flags) -> Result<RunManifest, CliError> {
    if flags.device != "cpu" {
        return Err(CliError::ConfigInvalid(format!("device `{}` is not available; use `cpu`", flags.device)));
    }
    let mut config = load_config(flags.config.as_deref())?;
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    let seeds = config.resolve_seeds();
    let out = flags
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    let recorder = manifest::Recorder::start(command.name(), &out, &config, &seeds)?;
    let ctx = commands::Context {
        out: &out,
        config: &mut config,
        seeds: &seeds,
        checkpoint: flags.checkpoint.as_deref(),
    };
    let report = commands::dispatch(command, ctx)?;
    let manifest = recorder.finish(&config, report.metrics)?;
    match report.failure {
        Some(e) => Err(e),
        None => Ok(manifest),
    }
}
