use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{record}: {message}")]
    Validation { record: String, message: String },
    #[error("no sensor frames to process")]
    EmptyDataset,
    #[error("at t = {timestamp}: {source}")]
    Estimator { timestamp: f64, source: livo_core::Error },
    #[error("{0}")]
    Metric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Stable, machine-parseable category used by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Validation { .. } => "validation",
            HarnessError::EmptyDataset => "empty-dataset",
            HarnessError::Estimator { .. } => "estimator",
            HarnessError::Metric(_) => "metric-undefined",
            HarnessError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Parse { .. } => 3,
            HarnessError::Validation { .. } => 4,
            HarnessError::EmptyDataset => 5,
            HarnessError::Estimator { .. } => 6,
            HarnessError::Metric(_) => 7,
            HarnessError::Io { .. } => 8,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
