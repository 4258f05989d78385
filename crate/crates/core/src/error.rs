use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("attribute list produced no queries")]
    EmptyOutput,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("standard deviation {0:e} is too small to standardize")]
    DegenerateStd(f64),

    #[error("missing split: {0}")]
    MissingSplit(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    #[error("not a probability distribution: {0}")]
    NotADistribution(String),

    #[error("history has zero probability under the model")]
    ZeroEvidence,

    #[error("query {0} has already been observed")]
    QueryAlreadyObserved(usize),

    #[error("every query has already been selected")]
    AllQueriesSelected,

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite loss at epoch {epoch}, stage {stage}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        stage: u8,
        detail: String,
    },

    #[error("non-finite objective after {iterations} iterations")]
    NonFiniteObjective { iterations: usize },

    #[error("answer source failed: {0}")]
    AnswerSource(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
