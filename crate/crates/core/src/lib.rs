//! Transfer-learning toolkit for cloze-style emotion classification.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod registry;
pub mod tensor;
pub mod text;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::Tensor;
