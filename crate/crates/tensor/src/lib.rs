//! A compact reverse-mode automatic differentiation engine over dense
//! NCHW tensors.
//!
//! Backward rules are themselves recorded operations, so gradients can be
//! differentiated again (`grad(.., create_graph = true)`). This is what the
//! Wasserstein gradient penalty needs: the penalty is a function of an input
//! gradient and must be differentiated with respect to critic parameters.
//!
//! Convolutions run through im2col + GEMM; the batch dimension is split across
//! rayon workers when the `parallel` feature is on, with a sequential fallback
//! that produces bitwise identical results.

mod autograd;
pub mod kernels;
pub mod nn;
mod ops;
pub mod parallel;
mod real;
mod tensor;

pub use autograd::{backward, grad, Gradients};
pub use parallel::{set_parallelism, Parallelism};
pub use real::Real;
pub use tensor::{is_grad_enabled, no_grad, GradModeGuard, Tensor};
