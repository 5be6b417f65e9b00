//! Dense reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its nodes; calling
//! [`Graph::backward`] on a scalar node returns the gradients of every
//! trainable leaf. Graphs are built fresh for each optimisation step and
//! parameters live outside them as plain [`Tensor`] values that the
//! [`AdamState`] updates in place.

mod adam;
mod backward;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use backward::Gradients;
pub use graph::{sigmoid, softplus, Graph, Var};
pub use tensor::Tensor;
