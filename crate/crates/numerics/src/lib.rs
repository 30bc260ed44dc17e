//! Deterministic dense tensors with reverse-mode gradients.
//!
//! Just enough machinery to train small autoencoders on a CPU: affine maps,
//! 2-D (transposed) convolutions, ReLU, TopK, mean squared error, the Adam
//! optimizer, central-difference gradient checks and a small binary tensor
//! file format. Single precision is used for training, double precision for
//! checks; the element type is a type parameter so one graph never mixes them.

mod adam;
mod error;
mod gradcheck;
mod graph;
pub mod io;
pub mod kernels;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use kernels::{conv2d, conv_transpose2d, linear, mse, relu, topk, ConvParams};
pub use scalar::{gemm, Precision, Scalar};
pub use tensor::Tensor;
