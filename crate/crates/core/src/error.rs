use std::path::PathBuf;

use thiserror::Error;

use crate::store::Dtype;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: tensor {name:?} ends at byte {end} but data section holds {available}")]
    TruncatedPayload { name: String, end: u64, available: u64 },

    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),

    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),

    #[error("overlapping byte ranges for tensors {first:?} and {second:?}")]
    OverlappingRanges { first: String, second: String },

    #[error("checkpoint contains no tensors")]
    EmptyCheckpoint,

    #[error("unknown tensor {0:?}")]
    UnknownTensor(String),

    #[error("non-finite value in tensor {name:?} at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("overflow for dtype {dtype}: value {value} in tensor {name:?}")]
    Overflow { name: String, dtype: Dtype, value: f64 },

    #[error("shape mismatch for tensor {name:?}: {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("value count {len} does not match shape {shape:?} for tensor {name:?}")]
    LengthMismatch {
        name: String,
        shape: Vec<usize>,
        len: usize,
    },

    #[error("tensor {name:?} is missing from model {model:?}")]
    MissingTensor { name: String, model: String },

    #[error("degenerate task vector for task {0:?} (zero norm)")]
    DegenerateTaskVector(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("merge aborted: {0}")]
    Aborted(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a malformed request (bad recipe or
    /// argument) rather than by the data being processed.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidRecipe(_) | Error::InvalidArgument(_))
    }
}
