use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("division by a zero denominator element")]
    DivisionByZero,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward requires a 1x1 loss, got {0}x{1}")]
    NotScalar(usize, usize),

    #[error("loss tensor is not tracked on this tape")]
    Untracked,

    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,

    #[error("tensor belongs to a different tape")]
    ForeignTensor,

    #[error("empty mask")]
    EmptyMask,

    #[error("{0}")]
    Undefined(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at iteration {0}: non-finite loss")]
    Diverged(usize),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
