//! Crate-wide error type.

use crate::model::StepResult;

#[derive(Debug, thiserror::Error)]
pub enum ArpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("tensor order {order} outside supported range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("regularizer Hessian is undefined at s = 0 when p = 1")]
    RegularizerSingularity,

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error(
        "inner solver exhausted its budget of {budget} iterations \
         (smallest stationarity-test violation reached: {best_violation:.3e})"
    )]
    InnerSolverFailure {
        budget: usize,
        best_violation: f64,
        /// Best iterate found before giving up.
        best: Box<StepResult>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("problem '{0}' is not a finite sum; subsampling requires one")]
    NotFiniteSum(String),

    #[error("function-estimate tolerance must be nonnegative, got {0}")]
    NegativeTolerance(f64),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ArpError>;
