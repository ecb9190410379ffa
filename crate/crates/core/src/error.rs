use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
    Usage,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    Diverged(Box<crate::rnd::RunFailure>),
    #[error("{failed} of {total} runs failed (seeds {seeds:?}); need at least half to succeed")]
    RunsFailed {
        failed: usize,
        total: usize,
        seeds: Vec<u64>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Config,
            Error::Data(_) | Error::Format { .. } | Error::Io(_) => ErrorKind::Data,
            Error::NonFinite(_) | Error::Diverged(_) | Error::RunsFailed { .. } => ErrorKind::Numerical,
            Error::Dimension(_) | Error::Usage(_) | Error::EmptyBatch => ErrorKind::Usage,
        }
    }
}
