use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at {location}: {reason}")]
    Malformed { location: String, reason: String },

    #[error("event at {location} lies outside the {width}x{height} sensor: ({x}, {y})")]
    OutOfBounds {
        location: String,
        x: u64,
        y: u64,
        width: u16,
        height: u16,
    },

    #[error("illegal polarity {value} at {location}")]
    Polarity { location: String, value: i64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stream is not sorted by timestamp at index {0}")]
    Unsorted(usize),

    #[error("cloud {0} carries no labels")]
    Unlabeled(usize),

    #[error("label {0} is not in {{0, 1}}")]
    Label(u8),

    #[error("roc needs both classes present (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
