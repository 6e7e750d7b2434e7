//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. The CLI maps variants onto process exit codes:
/// argument/state/plan errors exit 1, I/O errors exit 2, numeric failures
/// exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's contract (bad value, empty input,
    /// out-of-range index).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An object is in a state that forbids the requested operation
    /// (all experts masked off, missing reference metrics, empty pool).
    #[error("invalid state: {0}")]
    State(String),

    /// A pruning plan could not be built or applied.
    #[error("pruning plan error: {0}")]
    Plan(String),

    /// Non-finite values were produced where finite ones are required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Configuration file problems (parse errors, unknown keys).
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem failures, tagged with the path involved.
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failures.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Io { .. } => 2,
            Error::Serde(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
