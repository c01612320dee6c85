//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded on a [`Graph`] tape in evaluation order;
//! [`Graph::backward`] walks the tape once in reverse. The engine is
//! batch-free: feature maps are `[C,H,W]` and there is no broadcasting
//! beyond scalar constants.

pub mod checkpoint;
pub mod functional;
mod graph;
pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{CustomOp, Graph, ResizeMode, Scale, Var};
pub use optim::AdamW;
pub use params::{Grads, Init, ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
