//! Error type shared across the pipeline.

use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A parameter is outside its valid range (non-positive cell size,
    /// radius larger than the index cell, bad threshold, ...).
    InvalidParameter(String),
    /// A rotation matrix failed the orthonormality check.
    InvalidPose(String),
    /// An input violated an operation's contract (wrong frame, unlabeled
    /// point pushed into the reference, ...).
    ContractViolation(String),
    /// A dataset file could not be parsed (truncated, wrong record size,
    /// unparsable pose line, mismatched point/label counts).
    Format(String),
    /// A cluster or prediction file violated the exchange protocol.
    Protocol(String),
    /// The segmentation backend failed for the listed clusters.
    Backend {
        message: String,
        cluster_ids: Vec<usize>,
    },
    /// Residual points were left uncovered by every cluster prediction.
    IncompleteCoverage { missing: Vec<usize> },
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::InvalidPose(msg) => write!(f, "invalid pose: {msg}"),
            Error::ContractViolation(msg) => write!(f, "contract violation: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Protocol(msg) => write!(f, "protocol error: {msg}"),
            Error::Backend {
                message,
                cluster_ids,
            } => write!(f, "backend error on clusters {cluster_ids:?}: {message}"),
            Error::IncompleteCoverage { missing } => {
                write!(
                    f,
                    "incomplete coverage: {} residual point(s) missing from all predictions (first: {:?})",
                    missing.len(),
                    missing.iter().take(8).collect::<Vec<_>>()
                )
            }
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
