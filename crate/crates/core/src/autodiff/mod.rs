//! Minimal dense-tensor reverse-mode differentiation.
//!
//! Only the operators the embedding network needs are provided: 2-D
//! convolution, ReLU, sigmoid, channel concat/slice, 2×2 max-pooling,
//! nearest 2× upsampling, masked L1 and logistic losses, plus the few
//! arithmetic helpers used to combine loss terms. Tensors are row-major and
//! single images are laid out `[C, H, W]`.

mod adam;
mod conv;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::conv2d_forward;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{DType, Real, Tensor};
