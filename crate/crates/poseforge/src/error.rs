//! Crate-wide error type and result alias.

use std::path::PathBuf;

/// Errors surfaced by library entry points.
///
/// Programmer errors (tensor shape mismatches, out-of-range indices) panic
/// instead; everything that can be triggered by user input or on-disk data
/// comes through here.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// I/O failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text format (OBJ, JSON pose file, config) failed to parse.
    #[error("{path}:{line}:{col}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        col: usize,
        msg: String,
    },

    /// A binary artifact (point cloud, image tensor, checkpoint) is malformed.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Invalid argument, configuration value or data relationship.
    #[error("{0}")]
    Invalid(String),

    /// Numerical failure: NaN/Inf in training, or a failed gradient check.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
