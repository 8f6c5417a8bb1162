//! Experiment configuration, seed sweeps and metrics persistence.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod compare;
pub mod config;
pub mod metrics;
pub mod runner;
pub mod stats;

pub use compare::{compare_modes, ComparisonReport};
pub use config::{load_config, parse_config, ExperimentConfig};
pub use runner::{run_experiment, RunSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error("{0}")]
    Stats(#[from] stats::StatsError),
}

impl ExpError {
    /// Whether the error comes from the user's configuration rather than
    /// from executing it.
    pub fn is_config(&self) -> bool {
        matches!(self, ExpError::Parse(_) | ExpError::Invalid { .. })
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        ExpError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ExpError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}
