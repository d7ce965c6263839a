#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Self-supervised Bayesian neural networks at desk scale.

pub mod active;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod posterior;
pub mod pretrain;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
