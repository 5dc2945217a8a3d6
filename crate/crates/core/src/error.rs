//! Error taxonomy shared across the workspace.

use thiserror::Error;

/// Unified error type for all library operations.
#[derive(Error, Debug)]
pub enum Error {
    /// Malformed arguments: bad shapes, non-stochastic rows, empty inputs, ...
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative routine ran out of its iteration budget.
    #[error("no convergence after {iters} iterations (residual {residual:.3e}, tol {tol:.3e})")]
    Convergence {
        iters: usize,
        residual: f64,
        tol: f64,
    },

    /// A numeric quantity left the finite range (NaN/inf in losses or params).
    #[error("divergence in {context}: {value} is not finite")]
    Divergence { context: String, value: f64 },

    /// A serialized artifact could not be parsed; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns `v` unchanged if finite, otherwise a divergence error tagged with `context`.
pub fn ensure_finite(v: f64, context: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence {
            context: context.to_string(),
            value: v,
        })
    }
}
