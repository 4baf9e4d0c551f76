//! Dense tensors, a recording tape with reverse-mode (and
//! reverse-over-reverse) differentiation, Adam and parameter checkpoints.

mod adam;
pub mod checkpoint;
mod jacobian;
pub mod nn;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use jacobian::{abs_sum, input_jacobian, jacobian_at};
pub use ops::{eval as forward_op, Op};
pub use params::{Bound, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: bad axis for shape {shape:?} ({detail})")]
    BadAxis {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },
    #[error("backward needs a one-element output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite values in {context}")]
    NonFinite { context: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
