//! Autoregressive generation of 3D tree skeletons.
//!
//! Trees are sets of tapered branches, linearized by one of four orderings,
//! quantized into a 259-token vocabulary and modeled by a multi-resolution
//! ("hourglass") causal transformer trained from scratch on a small
//! reverse-mode autodiff engine.

pub mod bench;
pub mod config;
pub mod error;
pub mod generation;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod ordering;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod tree;

pub use error::{Error, Result};
