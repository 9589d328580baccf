//! Dense `f64` tensors and a reverse-mode autodiff graph.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{sigmoid, Activation, AttentionMap, AttentionSpans, Graph, ReduceKind, Var};
pub use tensor::Tensor;
