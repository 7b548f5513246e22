use std::io;

use thiserror::Error;

/// Errors produced by the kernels, file formats and commands.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A command-line flag failed validation. Reported with exit code 2.
    #[error("invalid value for --{flag}: {reason}")]
    Usage { flag: &'static str, reason: String },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("normalization denominator vanished at output pixel ({row}, {col})")]
    DegenerateNormalizer { row: usize, col: usize },

    #[error("malformed {kind} data: {reason}")]
    Format { kind: &'static str, reason: String },

    #[error("training diverged: loss is {0} at step {1}")]
    Diverged(f64, usize),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }

    pub(crate) fn format(kind: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { kind, reason: reason.into() }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
