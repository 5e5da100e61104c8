//! Small double-precision neural-network engine: dense and 1-D convolution
//! layers, activations, MSE and binary cross-entropy, SGD and Adam, a
//! finite-difference gradient checker and a binary model container.

mod gradcheck;
pub mod io;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

pub use gradcheck::{check_network, flat_grads, flat_params, gradient_check, zero_grads};
pub use layer::{conv_output_len, sigmoid, Layer, LayerSpec};
pub use loss::{mse_loss, LossFn};
pub use network::{validate, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;

/// Anything with trainable parameters and matching gradient buffers.
pub trait Params {
    /// Calls `f(params, grads)` for every parameter block, always in the same order.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));
}
