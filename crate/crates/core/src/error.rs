//! Error taxonomy shared by every module.
//!
//! The variants map onto the CLI exit-code contract: configuration, shape,
//! domain, parse, and I/O problems are usage errors (exit 2); non-finite
//! values and step-size underflow are numerical failures (exit 3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value. The message names the offending field.
    #[error("configuration error: {0}")]
    Config(String),

    /// Incompatible tensor or vector dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation not defined for the given variant (e.g. a velocity target
    /// for a nonlinear interpolant).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// A non-finite value appeared mid-computation. `context` pins down
    /// where (layer index, sample index, solver step).
    #[error("numerical error at {context}: non-finite value")]
    NonFinite { context: String },

    /// Training diverged (non-finite loss).
    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    /// Adaptive solver could not make progress.
    #[error("stiffness error: step size underflow at t={t:.6e}")]
    StepSizeUnderflow { t: f64 },

    /// Malformed text input, with a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures that indicate numerical breakdown rather than a
    /// misconfigured run.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::StepSizeUnderflow { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
