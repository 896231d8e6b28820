//! Dense tensors and tape-based reverse-mode differentiation for the layer
//! set of the separable student network.
//!
//! All arithmetic is `f64`. Activations are `(C, F, T)`: channels, frequency
//! bins, time frames.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::finite_difference_gradcheck;
pub use kernels::{Axis, Conv1dSpec};
pub use tape::{Tape, Var};
pub use tensor::{Parameter, Tensor};
