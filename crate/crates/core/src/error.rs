//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A BS/target pair with zero range; angles and attenuation are undefined.
    #[error("degenerate link between BS {bs} and target {target}")]
    DegenerateLink { bs: usize, target: usize },

    #[error("matrix is not positive semidefinite: {what} (min eigenvalue {min_eig:.3e})")]
    NotPsd { what: &'static str, min_eig: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// Innovation or information solve failed even after jitter escalation.
    #[error("symmetric solve failed in {what} (condition estimate {condition:.3e})")]
    SolveFailure { what: &'static str, condition: f64 },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("config: {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("numerical failure at block {block}: {source}")]
    AtBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Wraps an error with the sensing-block index where it occurred.
    pub fn at_block(self, block: usize) -> Self {
        Error::AtBlock {
            block,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
