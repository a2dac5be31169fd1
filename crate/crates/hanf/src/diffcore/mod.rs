//! Minimal reverse-mode autodiff: tensors, a recording tape, the forward
//! primitives used by the cell networks, losses, and SGD.

pub mod gradcheck;
pub mod init;
pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use kernels::ConvAttrs;
pub use optim::{clip_grad_norm, sgd_step, OptimState};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
