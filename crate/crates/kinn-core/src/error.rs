//! Crate-wide error type.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Bad argument to an operation (non-positive dt, negative order, ...).
    InvalidArgument(String),
    /// Cell or cascade violates the dissipativity requirement alpha > 0.
    NonDissipative { alpha: f64 },
    /// Tensor/parameter shape mismatch.
    Shape(String),
    /// Configuration rejected (unknown key, invalid combination, ...).
    Config(String),
    /// Dataset would be degenerate (e.g. max == min in normalization stats).
    DegenerateData(String),
    /// Training loss exceeded the divergence threshold.
    Divergence { epoch: usize, loss: f64 },
    /// On-disk dataset does not match the config that requested it.
    DatasetHashMismatch { expected: String, found: String },
    /// Malformed file contents (bad magic, truncated payload, ...).
    Format(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonDissipative { alpha } => {
                write!(f, "non-dissipative cell: alpha = {alpha} must be > 0")
            }
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::DegenerateData(msg) => write!(f, "degenerate data: {msg}"),
            Error::Divergence { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch}: loss = {loss:e}")
            }
            Error::DatasetHashMismatch { expected, found } => {
                write!(f, "dataset hash mismatch: config expects {expected}, found {found}")
            }
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
