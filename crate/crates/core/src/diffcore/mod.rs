//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters are registered
//! as leaves of a named group (see [`OMEGA`] and [`ALPHA`]) and
//! [`Tape::backward`] returns gradients only for the groups asked for.
//! Broadcasting is limited to scalar scaling and the bias of `affine`.

mod gradcheck;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{central_difference, gradcheck};
pub use tape::{GradientBundle, OpKind, Tape, Var, ALPHA, OMEGA};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("unknown parameter group `{0}`")]
    UnknownGroup(String),
    #[error("{op}: input outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("variable #{0} is not on this tape")]
    UnknownVar(usize),
}
