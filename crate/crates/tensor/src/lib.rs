//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The building blocks are deliberately small:
//!
//! - [`Tensor`]: an n-dimensional array of `f64` values in row-major order.
//! - [`Tape`]: a define-by-run Wengert list. Every primitive op is a method
//!   on the tape; it computes the forward value eagerly and records enough
//!   to replay the chain rule backwards.
//! - [`grad_check`]: central finite differences against the tape's analytic
//!   gradients, the verification oracle used throughout the test suite.
//!
//! Tensors are plain owned buffers; the tape owns a copy of every value it
//! records, so a tape is rebuilt per forward pass and dropped afterwards.
//! There is no implicit broadcasting except scalar multiplication and the
//! explicit [`Tape::add_bcast`] (trailing-shape broadcast used for biases
//! and positional encodings).

mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use error::TensorError;
pub use gradcheck::grad_check;
pub use tape::{Precision, Tape, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
