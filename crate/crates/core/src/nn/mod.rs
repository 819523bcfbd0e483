//! Exact MLP engine: forward pass, backpropagation, optimizers and training.

pub mod checkpoint;
mod model;
mod optimizer;
mod train;

pub use model::*;
pub use optimizer::{Optimizer, OptimizerKind};
pub use train::{accuracy, predict, train, TrainConfig};
