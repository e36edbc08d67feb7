//! Error type shared by the whole crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A function was called with arguments that violate its contract
    /// (dimension mismatch, non-positive variance, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is invalid or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file could not be parsed. `at` locates the failure
    /// ("line 12" for text payloads, "byte 8190" for binary ones).
    #[error("parse error in {path} at {at}: {msg}")]
    Parse { path: String, at: String, msg: String },

    /// Input data is structurally invalid (unsorted records, id mismatch,
    /// empty dataset, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// An internal bookkeeping invariant failed. Reaching this is a bug.
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } => 2,
            Error::Contract(_) | Error::Invariant(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
