//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;

/// Errors surfaced by the simulator library.
///
/// The variants map one-to-one onto the CLI exit codes: configuration and
/// input problems exit with 2, violated internal invariants with 3, and
/// filesystem failures with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value (file or flag) is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An internal invariant failed; this indicates a bug, not bad input.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A filesystem operation failed; the offending path is reported.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Config(_) => 2,
            Error::Invariant(_) => 3,
            Error::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
