//! Dense tensors, same-size convolutions with exact reverse-mode gradients,
//! pointwise activations and the ADAM optimizer.
//!
//! Everything is `f64` and single-threaded, so a forward/backward pass is a
//! deterministic function of its inputs.

mod adam;
pub mod blob;
mod conv;
mod network;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv2d_naive, ConvGrads, ConvLayer};
pub use network::{ForwardCache, Gradients, Layer, Network};
pub use tensor::Tensor;
