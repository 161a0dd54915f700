//! Error type shared across the simulator crates.

use thiserror::Error;

/// Errors surfaced by the core library.
///
/// The variants map onto the process exit codes used by the CLI:
/// `Config` -> 2, everything else that escapes a command -> 3.
#[derive(Debug, Error)]
pub enum CoreError {
    /// An argument violated a type invariant (out-of-range node, address, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A run configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),
    /// A numerical precondition failed (zero norm, non-positive fit input, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// An operation was used outside its contract (branching gate, bad mode, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Underlying I/O failure while reading or writing data files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CoreError::Numerical(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }
}
