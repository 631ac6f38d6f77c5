//! A small CNN engine with backpropagation, the two HomographyNet heads and
//! the SGD training loop.

use thiserror::Error;

pub mod checkpoint;
pub mod gradcheck;
mod layers;
pub mod loss;
pub mod network;
pub mod predict;
pub mod quant;
mod scalar;
pub mod spec;
mod tensor;
pub mod train;

pub use network::{Mode, Network, Trace};
pub use scalar::Scalar;
pub use spec::{homography_net, Head, LayerSpec, NetworkSpec, Scale, ScaleConfig};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("label component {value} outside [-{rho}, {rho}]")]
    LabelOutOfRange { value: f64, rho: f64 },
    #[error("loss became non-finite at iteration {iteration} (lr {lr})")]
    NonFiniteLoss { iteration: u64, lr: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Datagen(#[from] crate::datagen::DatagenError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
