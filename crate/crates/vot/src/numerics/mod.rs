//! Dense f64 tensors with reverse-mode differentiation, and the closed-form
//! 3x3 SVD the pose head relies on.

pub mod check;
pub mod svd3;
pub mod tensor;

pub use tensor::{Gradients, NumericsError, Tape, Tensor};
