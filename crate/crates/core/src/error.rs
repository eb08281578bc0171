use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library. Variants are grouped so that callers
/// (the CLI in particular) can map them to data vs. numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column(s): {}", .0.join(", "))]
    Schema(Vec<String>),

    #[error("duplicate observations for {} key(s): {}", .0.len(), .0.join("; "))]
    Duplicate(Vec<String>),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown {kind} `{id}`")]
    NotFound { kind: &'static str, id: String },

    #[error("insufficient history: need {needed} days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("gap of {length} missing day(s) starting {start} exceeds the gap policy")]
    Gap { start: String, length: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of a numerical routine rather than bad input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Degenerate(_))
    }
}
