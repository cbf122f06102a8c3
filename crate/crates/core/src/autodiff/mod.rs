//! Reverse-mode differentiation over [`Tensor`](crate::tensor::Tensor) graphs.
//!
//! Graphs are built once, evaluated with [`Graph::forward`] and
//! differentiated with [`Graph::backward`]. Unrolled recurrences simply
//! reuse parameter nodes at every step; their adjoints accumulate.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, GradCheckReport};
pub(crate) use graph::batch_norm_train;
pub use graph::{Gradients, Graph, NodeId, Op};

#[cfg(test)]
mod tests;
