use std::io;

use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no annotation is flagged as correct")]
    NoCorrectAnnotations,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("map is not binary: value {0} found")]
    NotBinary(u8),
    #[error("saliency map has no nonzero pixel")]
    EmptySaliency,
    #[error("rectangle {0} does not fit in a {1}x{2} map")]
    OutOfBounds(String, usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("scored set needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { key: String, line: usize },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("PGM payload truncated: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },
    #[error("unsupported PGM maxval {0}")]
    UnsupportedMaxval(u32),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("non-finite value during {0}")]
    NumericFailure(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ConfigInvalid(_) | Error::Parse { .. } | Error::UnknownKey { .. } => {
                ErrorKind::Config
            }
            Error::NumericFailure(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    /// 2 config error, 3 data error, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn dims(expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", got.0, got.1),
        }
    }
}
