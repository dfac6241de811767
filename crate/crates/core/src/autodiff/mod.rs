//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes. Every op method evaluates its forward value
//! immediately and records what backward needs; [`Graph::backward`] then
//! walks the tape once in reverse. Graphs are single-threaded; build one
//! graph per worker and reduce leaf gradients afterwards.

mod conv;
mod elementwise;
mod gradcheck;
mod graph;
mod linalg;
mod norm;
mod shape;
mod tensor;

pub use conv::ConvAttrs;
pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};

#[cfg(test)]
mod tests;
