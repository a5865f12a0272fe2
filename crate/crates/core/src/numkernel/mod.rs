//! Dense-tensor reverse-mode differentiation engine.
//!
//! A [`Graph`] evaluates operations eagerly and records those that touch a
//! gradient-carrying leaf. [`Graph::backward`] replays the record once, in reverse
//! insertion order, and returns the gradients of every leaf created with
//! [`Graph::param`]. [`grad_check`] compares that result to central differences.

mod gradcheck;
mod graph;
mod scalar;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, ABS_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use scalar::Real;
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch in {op}: {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows of unequal length")]
    Ragged,
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("graph was already differentiated; rebuild it with a fresh forward pass")]
    AlreadyBackpropagated,
}
