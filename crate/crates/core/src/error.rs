//! Error taxonomy shared by the library and the CLI.
//!
//! Every fallible operation returns one of four kinds, and each kind maps to
//! a stable process exit code so shell pipelines can branch on failure class:
//! usage errors exit 1, data errors exit 2, resource errors exit 3.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The caller violated an API or CLI contract (bad flag, misaligned
    /// inputs, parameter out of range).
    #[error("usage error: {0}")]
    Usage(String),

    /// The input data itself is malformed or violates an invariant
    /// (bad JSONL line, audio length out of bounds, empty matrix).
    #[error("data error: {0}")]
    Data(String),

    /// An external resource could not be obtained (memory budget exceeded,
    /// port already bound).
    #[error("resource error: {0}")]
    Resource(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn resource(msg: impl Into<String>) -> Self {
        Error::Resource(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Resource(_) => 3,
        }
    }
}
