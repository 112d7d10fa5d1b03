//! Tensor arithmetic with reverse-mode differentiation.

mod graph;
pub mod kernels;

pub use graph::{Graph, Var};
pub use kernels::{Activation, Padding};
