//! Reverse-mode differentiation over a closed set of primitives.
//!
//! Tensors are channel-last: a latent field is `[B, D, C]` (batch, space,
//! channels) and linear maps act on the last axis.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_gradients, random_inputs, relative_error, GradReport, ABS_FLOOR, FD_STEP};
pub use graph::{CustomBackward, Gradients, Graph, Var, LAYER_NORM_EPS};
pub use tensor::{Real, Tensor};
