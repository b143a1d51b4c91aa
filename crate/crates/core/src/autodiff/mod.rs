//! Dense `f64` tensors, a reverse-mode tape over the handful of primitives
//! the digit networks need, and the Adam optimizer.

mod adam;
mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{softmax_rows, Gradients, NodeId, Tape};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward on an empty tape")]
    EmptyTape,
    #[error("node {0} is not on this tape")]
    UnknownNode(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} parameter tensors, got {got}")]
    ParamCount { expected: usize, got: usize },
}
