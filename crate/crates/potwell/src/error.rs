//! Error type shared across the crate.
//!
//! Structural misuse (grid mismatch between two fields) panics like any
//! shape error in a numerics crate; everything driven by caller-supplied
//! values (parameter domains, brackets, file formats, configs) is a
//! recoverable [`Error`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violated its documented domain (e.g. `a <= 0`, `q < 1`).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A value fell outside the mathematical domain of an operation
    /// (e.g. `delta` outside `(0, p)` for the well-depth curve).
    #[error("domain error: {0}")]
    Domain(String),

    /// A root bracket or scan precondition failed.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// Malformed checkpoint file (magic, length, header fields).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Malformed or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// An experiment ran fine operationally but a theorem-level check failed.
    /// The CLI maps this to exit code 2 (vs 1 for everything else).
    #[error("theorem check failed: {0}")]
    TheoremCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
