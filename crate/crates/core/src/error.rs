use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: record {record}: {message}")]
    Record {
        path: String,
        record: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("gradient/parameter mismatch: {0}")]
    Consistency(String),

    #[error("cannot load checkpoint: {0}")]
    Load(String),

    #[error("variant mismatch: expected {expected}, checkpoint holds {found}")]
    VariantMismatch { expected: String, found: String },

    #[error("non-finite loss {loss} at epoch {epoch}, instance {instance}")]
    Numeric {
        epoch: usize,
        instance: usize,
        loss: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
