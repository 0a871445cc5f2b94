use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the search engine, the metrics, and the architecture decoder.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension `{name}`: coordinate {x} outside [{x_min}, {x_max}]")]
    Domain {
        name: String,
        x: i64,
        x_min: i64,
        x_max: i64,
    },

    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("epoch {epoch}: all {candidates} candidate evaluations failed ({diagnostic})")]
    EpochFailed {
        epoch: usize,
        candidates: usize,
        diagnostic: String,
    },

    #[error("incompatible space layout at dimension {index} (`{name}`): {reason}")]
    Layout {
        index: usize,
        name: String,
        reason: String,
    },

    #[error("undefined distance: {0}")]
    UndefinedDistance(String),

    #[error("corrupt checkpoint {path}: {message} (line {line}, column {column})")]
    CorruptCheckpoint {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
