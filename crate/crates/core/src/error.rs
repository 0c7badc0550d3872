use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the alignment lab.
#[derive(Debug, Error)]
pub enum XmaError {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    VersionMismatch {
        path: PathBuf,
        expected: u16,
        found: u16,
    },

    #[error("truncated file {path}: {context}")]
    Truncated { path: PathBuf, context: String },

    #[error("malformed file {path}: {context}")]
    Malformed { path: PathBuf, context: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl XmaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        XmaError::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            XmaError::Config(_) | XmaError::InvalidArgument(_) => ErrorKind::Config,
            XmaError::BadMagic { .. }
            | XmaError::VersionMismatch { .. }
            | XmaError::Truncated { .. }
            | XmaError::Malformed { .. }
            | XmaError::MissingArtifact(_)
            | XmaError::Io { .. } => ErrorKind::Io,
            XmaError::Degenerate(_)
            | XmaError::Shape(_)
            | XmaError::IndexOutOfRange { .. }
            | XmaError::NonFinite(_) => ErrorKind::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Numeric => "numeric",
        }
    }
}

pub type Result<T> = std::result::Result<T, XmaError>;
