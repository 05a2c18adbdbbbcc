//! Dense f64 tensors, reverse-mode automatic differentiation, and Adam.
//!
//! The primitive set is deliberately small: elementwise add/sub/mul, matmul,
//! row broadcast, reshape, transpose, sum/mean, max-pool over rows, relu,
//! sigmoid, tanh, exp, log, softplus, gather/scatter by row index, and
//! column concatenation. That closure covers every network in this crate.
//!
//! Tensors are immutable values; a [`Tape`] records one forward computation
//! and is consumed by [`Tape::backward`].

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamParams, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
