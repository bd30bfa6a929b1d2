use thiserror::Error;

use crate::data::DataError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("empty token sequence for {0}")]
    EmptyText(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Short machine-readable category, used for one-line CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Tensor(_) => "numeric",
            Self::Data(DataError::Io { .. }) | Self::Io { .. } => "io",
            Self::Data(DataError::Config(_)) => "config",
            Self::Data(_) => "data",
            Self::UnknownId(_) => "unknown_id",
            Self::EmptyText(_) => "empty_text",
            Self::Invalid(_) => "invalid_input",
            Self::UndefinedCorrelation(_) => "undefined_correlation",
            Self::Checkpoint(_) => "checkpoint",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
