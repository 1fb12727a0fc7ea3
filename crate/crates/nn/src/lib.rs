//! Minimal CPU neural-network toolkit used by the encoder and classifier code.
//!
//! Everything is `f32`, row-major, NCHW for image batches. Layers expose an
//! inference path (`forward`, `&self`) and a training path (`forward_train`,
//! caches activations) followed by `backward`, which accumulates parameter
//! gradients and returns the gradient with respect to the layer input.

pub mod gemm;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{
    Conv2d, GlobalAvgPool, GroupNorm, Layer, Linear, MaxPool2d, Module, Relu, ResidualBlock, Sequential,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{cosine_lr, Adam, Sgd};
pub use tensor::{Param, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("parameter length mismatch: expected {expected}, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}
