use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is below 1e-12 and cannot be normalized")]
    ZeroVector,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid dimension {0}: at least 2 components are required")]
    InvalidDimension(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("loss batch has no anchors")]
    EmptyBatch,

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("anchor `{0}` appears more than once in the mega-batch")]
    DuplicateAnchor(String),

    #[error("no embedding for sentence `{0}`")]
    MissingEmbedding(String),

    #[error("per-member list length {actual} does not match mega-batch size {expected}")]
    IndexMismatch { expected: usize, actual: usize },

    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine {
        file: String,
        line: usize,
        reason: String,
    },

    #[error("unknown sentence id `{0}`")]
    UnknownId(String),

    #[error("duplicate sentence id `{0}`")]
    DuplicateId(String),

    #[error("no records left after filtering: {0}")]
    EmptyResult(String),

    #[error("calibration needs both labels, found only label {0}")]
    DegenerateLabels(u8),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 domain, 2 format/IO, 3 config.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::MalformedLine { .. }
            | Error::UnknownId(_)
            | Error::DuplicateId(_)
            | Error::Format(_)
            | Error::Io { .. } => 2,
            _ => 1,
        }
    }
}
