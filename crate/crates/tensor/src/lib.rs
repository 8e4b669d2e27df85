//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Every backward rule is written in terms of recorded tensor operations,
//! so gradients can be differentiated again (see
//! [`autograd::grad_create_graph`]). This is what gradient penalties on
//! critics need.

pub mod autograd;
pub mod element;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod shape;
mod tensor;

pub use autograd::{grad, grad_create_graph, grad_with, GradOptions};
pub use element::{DType, Element};
pub use ops::conv::ConvGeom;
pub use ops::elementwise::{sigmoid, softplus};
pub use optim::{Adam, AdamConfig};
pub use tensor::{enable_grad, is_grad_enabled, no_grad, with_no_grad, Backward, GradModeGuard, Tensor};
