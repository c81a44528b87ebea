use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: unknown label {label:?} (expected \"responsive\" or \"nonresponsive\")")]
    UnknownLabel { line: usize, label: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    InsufficientData(String),

    #[error("no training rationales found: {0}")]
    NoRationales(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("feature column {column} is outside the model's {width}-column space")]
    ColumnOutOfRange { column: usize, width: usize },

    #[error("snippet [{start}, {end}) of {doc_id:?} is outside the {len}-token sequence")]
    SnippetOutOfRange {
        doc_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("non-finite feature value {value} in column {column}")]
    NonFinite { column: usize, value: f64 },

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
