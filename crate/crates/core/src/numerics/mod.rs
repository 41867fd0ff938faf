//! Dense tensors, reverse-mode differentiation, and transformer layers.

mod graph;
pub mod layers;
mod params;
mod tensor;

use thiserror::Error;

pub use graph::{logistic, Gradients, Graph, Var};
pub use params::{Init, Initializer, ParamId, ParamStore, WEIGHT_INIT_STD};
pub use tensor::{layer_norm, softmax, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
}
