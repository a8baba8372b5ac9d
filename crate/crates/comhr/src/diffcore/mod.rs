//! Differentiable computation substrate.
//!
//! A small tape-based reverse-mode engine over 64-bit row-major tensors:
//! the operation set every learned module in this crate needs, exact
//! gradients for all of it, and a finite-difference harness to prove it.

mod error;
mod gradcheck;
mod graph;
mod opcheck;
mod ops;
mod tensor;

pub use error::{DiffError, DiffResult};
pub use gradcheck::{gradcheck, Evaluation, GradCheckOpts, GradCheckReport, ParamCheck};
pub use graph::{DiffNode, Gradients, Graph, NodeId, ParamSet, Parameter, Signature};
pub use opcheck::{check_op, OpCheckReport, OP_NAMES};
pub use ops::OpKind;
pub use tensor::Tensor;
