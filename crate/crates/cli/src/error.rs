use std::path::Path;

use peloton::dilemma::DilemmaError;
use peloton::metrics::MetricsError;
use peloton::racelog::LogError;
use peloton::stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::NonConvergence(_) => CliError::NonConvergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        match e {
            LogError::Io(m) => CliError::Io(m),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Log(l) => l.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<DilemmaError> for CliError {
    fn from(e: DilemmaError) -> Self {
        match e {
            DilemmaError::Metrics(m) => m.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}
