//! Dense tensors, a recording tape for reverse-mode differentiation,
//! parameters with optimizer state, and finite-difference verification.

pub mod checks;
mod gradcheck;
mod graph;
mod param;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheck};
#[doc(hidden)]
pub use graph::inject_adjoint_fault;
pub use graph::{Graph, NodeId, PROB_CLIP};
pub use param::{adam_step, sgd_step, Adam, ParamId, ParamSet, Parameter};
pub use scalar::{Precision, Scalar};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
