//! Error taxonomy shared by the library and the command-line driver.
//!
//! Errors are grouped by how a batch caller should react to them, and each
//! group maps to a stable process exit code:
//!
//! * [`ChbError::Config`] — the input (TOML run file, CLI flags, binary field
//!   file) is malformed or inconsistent.  Exit code 2.
//! * [`ChbError::Validation`] — the inputs parse, but the model parameters
//!   violate a structural assumption the scheme needs (checked up front by
//!   [`crate::validate`]).  Exit code 3.
//! * [`ChbError::Numerical`] — a solve failed at runtime: an iteration did not
//!   converge, a state left its admissible range, a matrix stopped being
//!   positive definite.  Exit code 4.

use std::fmt;

/// Convenient result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, ChbError>;

#[derive(Debug, thiserror::Error)]
pub enum ChbError {
    /// Malformed or inconsistent input: bad TOML, impossible shapes,
    /// out-of-range parameters, unreadable field files.
    #[error("config error: {0}")]
    Config(String),

    /// Model parameters violate a structural assumption of the scheme.
    /// Carries the failed check names so callers can report them.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A numerical procedure failed: non-convergent iteration, loss of
    /// positive definiteness, state outside its admissible range.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl ChbError {
    /// Process exit code for this error class (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            ChbError::Config(_) => 2,
            ChbError::Validation(_) => 3,
            ChbError::Numerical(_) => 4,
        }
    }

    /// Shorthand for a config error with a formatted message.
    pub fn config(msg: impl fmt::Display) -> Self {
        ChbError::Config(msg.to_string())
    }

    /// Shorthand for a numerical error with a formatted message.
    pub fn numerical(msg: impl fmt::Display) -> Self {
        ChbError::Numerical(msg.to_string())
    }
}

impl From<std::io::Error> for ChbError {
    fn from(e: std::io::Error) -> Self {
        ChbError::Config(format!("i/o error: {e}"))
    }
}
