//! Small dense kernels the detector is built from: NHWC tensors, 3x3
//! convolutions with exact backward passes, activations, Adam, and a
//! central-difference gradient checker.

mod activation;
mod adam;
pub(crate) mod conv;
mod gradcheck;
mod tensor;

pub use activation::{
    leaky_relu, leaky_relu_backward, leaky_relu_derivative, sigmoid, sigmoid_backward,
    sigmoid_derivative, DEFAULT_LEAKY_SLOPE,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvGradients, ConvLayerParams, Padding, KERNEL_SIZE};
pub use gradcheck::finite_difference_check;
pub use tensor::Tensor4;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },
    #[error("function value is not finite at component {index}")]
    NonFiniteValue { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
