use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{feature} value {value} outside [{min}, {max}]")]
    Range {
        feature: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("{axis} index {index} out of bounds (size {size})")]
    Index {
        axis: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("solver did not converge after {iterations} iterations (bracket [{lo}, {hi}], residual {residual})")]
    Solver {
        iterations: u32,
        lo: f64,
        hi: f64,
        residual: f64,
    },

    #[error("record {record}: {source}")]
    Record {
        record: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Length { expected: u64, actual: u64 },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("architecture error: {0}")]
    Architecture(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("N={n}: {source}")]
    Sweep {
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Strips `Record`/`Sweep` wrappers and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Record { source, .. } | Error::Sweep { source, .. } => source.root(),
            other => other,
        }
    }
}
