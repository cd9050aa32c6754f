use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid timestamp {value:?} on line {line}")]
    Timestamp { value: String, line: usize },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(String),
    #[error("timestamps not increasing at {0}")]
    NonMonotoneTimestamps(String),
    #[error("channel {0:?} is not declared in the schema")]
    UndeclaredChannel(String),
    #[error("channel {0:?} not found")]
    MissingChannel(String),
    #[error("channel {0:?} appears twice")]
    DuplicateChannel(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("linear solver failed: {0}")]
    Solver(String),
    #[error("split {split}, horizon {horizon}, predictor {predictor}: {source}")]
    Context {
        split: usize,
        horizon: usize,
        predictor: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_cell(self, split: usize, horizon: usize, predictor: &str) -> Self {
        match self {
            e @ Error::Context { .. } => e,
            e => Error::Context {
                split,
                horizon,
                predictor: predictor.to_string(),
                source: Box::new(e),
            },
        }
    }
}
