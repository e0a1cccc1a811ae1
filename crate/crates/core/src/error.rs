use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("item {id}: loadings violate the {family} pattern")]
    LoadingMask { id: String, family: String },

    #[error("item list is empty")]
    EmptyItems,

    #[error("anchor set is empty")]
    EmptyAnchors,

    #[error("anchor sets are not aligned: {0}")]
    AnchorMisalignment(String),

    #[error("{0}")]
    EmptyAnchorSet(String),

    #[error("transformation matrix is singular")]
    SingularTransform,

    #[error("non-finite loss encountered during the linking search")]
    NonFiniteLoss,

    #[error("chain diverged in block `{block}` (non-finite log posterior)")]
    ChainDivergence { block: String },

    #[error("item {item}: score {score} outside 0..={max}")]
    ScoreOutOfRange { item: String, score: i64, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config {path}, line {line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("condition {condition}, replication {replication}: {source}")]
    Condition {
        condition: String,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True when the root cause is a filesystem failure.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Condition { source, .. } => source.is_io(),
            _ => false,
        }
    }
}
