//! Dense linear algebra, reverse-mode gradients and singular values.

mod loss;
mod matrix;
mod svd;
mod tape;

pub use loss::{argmax, softmax_cross_entropy, softmax_in_place};
pub use matrix::Matrix;
pub use svd::singular_values;
pub use tape::{forward_backward, Gradients, NodeId, Tape};
