//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by estimation, fitting, and I/O routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition (dimension mismatch,
    /// out-of-range probability, empty method list, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The logistic MLE did not converge (separation, singular Hessian, or
    /// iteration cap), with the iteration count at which fitting stopped.
    #[error("logistic MLE did not converge after {iterations} iteration(s): {reason}")]
    NonConvergence { iterations: usize, reason: String },

    /// The empirical Fisher matrix is not numerically positive definite.
    #[error("empirical Fisher matrix is numerically singular")]
    SingularFisher,

    /// A fitted propensity reached exactly 0 or 1, so an inverse weight is
    /// undefined. Weights are never clipped; see the estimator docs.
    #[error("fitted propensity at sample {index} is numerically {value} (0 or 1)")]
    DegeneratePropensity { index: usize, value: f64 },

    /// A treatment arm required by the estimator contains no samples.
    #[error("degenerate treatment arm: {0}")]
    DegenerateArm(String),

    /// A corrected Hajek denominator is within tolerance of zero.
    #[error("corrected denominator {value:e} is within {tolerance:e} of zero")]
    DegenerateDenominator { value: f64, tolerance: f64 },

    /// A computation produced a non-finite intermediate value.
    #[error("numerical overflow in {0}")]
    NumericalOverflow(String),

    /// The Monte Carlo Fisher matrix of a scenario is not positive definite.
    #[error("invalid scenario: Monte Carlo Fisher matrix is not positive definite")]
    InvalidScenario,

    /// Experiment/CLI configuration error.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure, with the path that triggered it.
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// CSV parse/format failure, with the path that triggered it.
    #[error("CSV error at {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    /// Wrap an I/O error with its path for context.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap a CSV-layer error with its path for context.
    pub fn csv(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Csv {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
