//! Dense tensors with reverse-mode automatic differentiation.

mod float;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use float::Float;
pub use graph::{Graph, Var};
pub use tensor::Tensor;
