use std::path::PathBuf;

use mhc_core::corpus::CorpusError;
use mhc_core::metrics::MetricsError;
use mhc_core::promptkit::PromptError;
use mhc_core::trainer::{CheckpointError, TrainError};
use mhc_inference::InferenceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(#[from] InferenceError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 1 usage or config, 2 data, 3 backend.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 1,
            Self::Data(_) | Self::Io { .. } => 2,
            Self::Backend(e) => match e {
                InferenceError::InvalidConfig(_) | InferenceError::InvalidSampleCount { .. } => 1,
                _ => 3,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidRatios(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::TooManyShots(_) | PromptError::NoShots => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
