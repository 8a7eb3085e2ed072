use thiserror::Error;

use crate::diffcore::DiffError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),

    /// The validation gradient in omega has zero norm, so the finite-difference
    /// direction is undefined.
    #[error("degenerate finite-difference direction: omega-gradient of the validation loss is zero")]
    DegenerateDirection,

    #[error("inner solve did not converge after {iterations} iterations (gradient norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Hessian is singular or indefinite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("diverged at step {step}")]
    Diverged { step: usize },

    #[error("dimension {dim} of {what} exceeds the cap of {cap}")]
    DimensionCap {
        what: &'static str,
        dim: usize,
        cap: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
