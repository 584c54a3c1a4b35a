use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series too short for E={e}: need at least {needed} usable points, have {have}")]
    SeriesTooShort { e: usize, needed: usize, have: usize },

    #[error("empty prediction set after boundary drops (E={e}, tau={tau}, Tp={tp})")]
    EmptyPredictionSet { e: usize, tau: usize, tp: usize },

    #[error("distance matrix of {rows}x{cols} f64 exceeds the memory budget of {budget} bytes")]
    BudgetExceeded {
        rows: usize,
        cols: usize,
        budget: usize,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("connection to master lost after {attempts} reconnect attempts")]
    MasterUnreachable { attempts: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error is a usage or input problem rather than a
    /// failure that occurred during computation. The CLI maps these to
    /// exit code 2, everything else to 1.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::LengthMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::SeriesTooShort { .. }
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
