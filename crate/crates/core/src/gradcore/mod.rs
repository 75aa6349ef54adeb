//! Dense 2-D tensors with define-by-run reverse-mode differentiation.

mod check;
mod tape;
mod tensor;

pub use check::{compare_leaf, grad_check, numeric_gradient, relative_error, GradCheckReport, LeafCheck, FD_STEP, REL_FLOOR};
pub use tape::{selu, Node, NodeId, Op, Tape, SELU_ALPHA, SELU_LAMBDA};
pub use tensor::Tensor;
