//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two parameter vectors cannot be combined because their layouts differ.
    #[error("parameter layout mismatch at tensor `{tensor}`: {detail}")]
    LayoutMismatch { tensor: String, detail: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix dimension {dim} exceeds the supported limit {limit}")]
    DimensionTooLarge { dim: usize, limit: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transition matrix row {row} is not stochastic (sum {sum})")]
    NonStochasticRow { row: usize, sum: f64 },

    /// Parse or format problem in an external file, with the offending line.
    #[error("{path}:{line}: {msg}")]
    FileFormat {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("label file length mismatch: expected {expected} labels, found {found}")]
    LabelCountMismatch { expected: usize, found: usize },

    /// Configuration error, keyed by the `section.key` path that caused it.
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("aggregation infeasible: {0}")]
    Infeasible(String),

    #[error("client {client_id} has an empty shard")]
    EmptyShard { client_id: usize },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the round in which it occurred.
    pub fn in_round(self, round: usize) -> Error {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

/// Reject NaN and non-positive values in one place.
pub(crate) fn require_positive(value: f64, what: &str) -> Result<()> {
    if value.is_nan() || value <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive, got {value}"
        )));
    }
    Ok(())
}
