use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("missing target column `{0}`")]
    MissingTarget(String),
    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("classification target at row {row} is not a non-negative integer: {value}")]
    NonIntegralTarget { row: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("too many features for exhaustive enumeration: {d} > {max}")]
    TooManyFeatures { d: usize, max: usize },
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("class index given for a regression model")]
    ClassForRegression,
    #[error("index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("efficiency violated: base {base} + sum(phi) {sum} != fx {fx}")]
    Efficiency { base: f64, sum: f64, fx: f64 },
    #[error("external model: {0}")]
    External(String),
    #[error("external model protocol violation: {0}")]
    Protocol(String),
    #[error("external model timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("external model is not pure: repeated probe returned different outputs")]
    Impure,
    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
