//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine is deliberately narrow: the operations needed by encoder /
//! generator / patch-discriminator networks, a named parameter store, and
//! Adam. Everything is single-threaded and deterministic; `f64` is supported
//! throughout so gradients can be checked against finite differences.

mod error;
pub mod kernels;
pub mod ops;
mod params;
mod scalar;
mod tensor;
mod var;

pub use error::{Result, TensorError};
pub use params::{uniform, uniform_fan_in, Adam, ParamStore};
pub use scalar::{gemm, lit, Mat, Scalar};
pub use tensor::Tensor;
pub use var::{Gradients, Var};
