//! ESGCN traffic-flow forecasting: tensors with reverse-mode autodiff, data
//! preparation, the W-module / ES-module model, training and evaluation.

pub mod ablation;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{Esgcn, ModelConfig};
pub use tensor::{Gradients, Graph, Real, Tensor, Var};
