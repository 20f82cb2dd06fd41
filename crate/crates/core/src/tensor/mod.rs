//! Dense tensors, reverse-mode autodiff, optimizer and checkpoints.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;
mod scalar;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use optim::{lr_schedule, AdamW, AdamWConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use scalar::Scalar;
