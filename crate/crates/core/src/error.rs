use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged to a non-finite loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error in {path} at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("hash mismatch: expected {expected}, found {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::ShapeMismatch { .. } | Error::InvalidTensor(_) => ErrorCategory::Input,
            Error::NonFinite { .. } | Error::Divergence { .. } => ErrorCategory::Numeric,
            Error::EmptyDataset
            | Error::InvalidConfig(_)
            | Error::ParameterRange(_)
            | Error::Precondition(_)
            | Error::Unknown { .. } => ErrorCategory::Config,
            Error::Format { .. } | Error::Json(_) => ErrorCategory::Format,
            Error::HashMismatch { .. } => ErrorCategory::Provenance,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Numeric,
    Config,
    Format,
    Provenance,
    Io,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Input => 3,
            ErrorCategory::Format => 4,
            ErrorCategory::Provenance => 5,
            ErrorCategory::Numeric => 6,
            ErrorCategory::Io => 7,
        }
    }
}
