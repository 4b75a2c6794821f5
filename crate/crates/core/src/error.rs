//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by tensor construction, file I/O and model evaluation.
#[derive(Debug)]
pub enum Error {
    /// A parameter or input violated a documented precondition.
    Validation(String),
    /// A file did not conform to the expected on-disk format.
    Format { path: Option<PathBuf>, msg: String },
    /// An underlying I/O operation failed.
    Io { path: PathBuf, source: std::io::Error },
    /// An array had the wrong shape for the requested operation.
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    /// A checkpoint was produced by a different network configuration.
    FingerprintMismatch { expected: u64, actual: u64 },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            msg: msg.into(),
        }
    }

    pub fn format_at(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: Some(path.into()),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "invalid input: {msg}"),
            Error::Format { path: Some(p), msg } => {
                write!(f, "malformed file {}: {msg}", p.display())
            }
            Error::Format { path: None, msg } => write!(f, "malformed data: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
            Error::ShapeMismatch {
                what,
                expected,
                actual,
            } => write!(f, "{what}: expected shape {expected:?}, got {actual:?}"),
            Error::FingerprintMismatch { expected, actual } => write!(
                f,
                "checkpoint fingerprint {actual:#018x} does not match configured network {expected:#018x}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
