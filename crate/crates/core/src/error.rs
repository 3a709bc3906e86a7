use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("empty grid: every candidate location was pruned")]
    EmptyGrid,
    #[error("degenerate path: zero length")]
    DegeneratePath,
    #[error("path is blocked")]
    BlockedPath,
    #[error("empty sample vector")]
    EmptySamples,
    #[error("probability {0} outside the open interval (0, 1)")]
    InvalidProbability(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("singular regression: all distances are equal")]
    SingularRegression,
    #[error("matrix not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("posterior variance {value} at index {index} is below the round-off threshold")]
    NegativeVariance { index: usize, value: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for {len} locations")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
