//! Experiment driver: each stage is a function of the configuration, the
//! seeds and the files written by earlier stages.
//!
//! ```text
//! generate-data -> corpus/ (+ geometries/)
//! train         -> checkpoints/model_seed<N>.usmn, train_log_seed<N>.csv
//! evaluate      -> reports/<model>_<partition>.{csv,json}
//! infer, trace-streamlines, nearest-pair -> files in --out
//! ```

use std::io;

pub mod args;
pub mod config;
pub mod stages;

pub use args::{run, Cli, Command};
pub use stages::Partition;
pub use config::ExperimentConfig;

/// Process exit status for a validation failure (bad config or inputs).
pub const EXIT_VALIDATION: i32 = 1;
/// Process exit status for a failure while a stage runs.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] usmnet_core::Error),
    #[error(transparent)]
    Fom(#[from] usmnet_fom::FomError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
