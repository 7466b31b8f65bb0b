//! Experiment driver for one-shot Bayesian federated learning with
//! pseudocoresets: JSON experiment configs with per-task presets, a
//! deterministic seed-by-seed pipeline, and CSV/JSON artifact writers.

use std::fmt;

pub mod config;
pub mod runner;

/// Driver-level error: configuration problems (bad JSON, invalid settings)
/// are distinguished from runtime failures so the binary can map them to
/// different exit codes.
#[derive(Debug)]
pub enum CliError {
    /// The experiment config could not be parsed or resolved.
    Config(String),
    /// The pipeline failed while running or writing artifacts.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bpcfl_core::CoreError> for CliError {
    fn from(err: bpcfl_core::CoreError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

/// Result alias for driver operations.
pub type Result<T> = std::result::Result<T, CliError>;
