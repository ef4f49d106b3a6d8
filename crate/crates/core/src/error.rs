use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

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

    #[error("target column `{0}` not found")]
    MissingTarget(String),

    #[error("non-numeric value {value:?} at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("empty cell at row {row}, column `{column}`")]
    EmptyCell { row: usize, column: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("cannot split: {0}")]
    Split(String),

    #[error("invalid feature subset: {0}")]
    InvalidSubset(String),

    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint version error: {0}")]
    CheckpointVersion(String),

    #[error("checkpoint shape error: {0}")]
    CheckpointShape(String),

    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("generation produced no feature tokens")]
    EmptyGeneration,

    #[error("search failed: {0}")]
    Search(String),

    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("json error: {0}")]
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
