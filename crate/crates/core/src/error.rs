use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("label {label:?} is not in taxonomy {taxonomy:?}")]
    UnknownLabel { label: String, taxonomy: String },

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),

    #[error("pooling map has no entry for label {0:?}")]
    MissingMapping(String),

    #[error("cannot subsample {requested} examples from a dataset of {available}")]
    SubsampleTooLarge { requested: usize, available: usize },

    #[error("prediction maps are not aligned: {0}")]
    Alignment(String),

    #[error("pool has {available} eligible examples, {requested} demonstrations requested")]
    InsufficientPool { requested: usize, available: usize },

    #[error("label source has no prediction for example {0:?}")]
    MissingPrediction(String),

    #[error("no embedding for example {0:?}")]
    MissingEmbedding(String),

    #[error("embedding for {0:?} has zero norm")]
    ZeroNorm(String),

    #[error("embedding for {id:?} has dimension {found}, expected {expected}")]
    EmbeddingDimension {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error("authentication failed for endpoint {endpoint} (HTTP {status})")]
    Authentication { endpoint: String, status: u16 },

    #[error("endpoint {endpoint} returned HTTP {status}: {body}")]
    HttpStatus {
        endpoint: String,
        status: u16,
        body: String,
    },

    #[error("endpoint {endpoint} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        endpoint: String,
        attempts: u32,
        last: String,
    },

    #[error("malformed response from {endpoint}: {message}")]
    BadResponse { endpoint: String, message: String },

    #[error("offline mode: no cached completion for key {0}")]
    Offline(String),

    #[error("endpoint kind {0} does not support this operation")]
    Unsupported(String),

    #[error("configuration is invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("run {run} failed: {message}")]
    Run { run: String, message: String },

    #[error("prediction set does not cover ids: {}", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("{0}")]
    Analysis(String),

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
