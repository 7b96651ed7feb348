//! Minimal 1D CNN engine: valid convolution, max pooling, dense layers,
//! elementwise activations, reverse-mode gradients, Adam and a training
//! loop with early stopping.
//!
//! Activations are laid out per sample as `(channels, length)` row-major;
//! a batch is `batch` consecutive samples.

mod adam;
mod layers;
mod model;
mod tensor;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use layers::{Activation, LayerSpec, Shape};
pub use model::{CnnModel, Gradients, ParamSlot, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::Tensor1D;
pub use train::{train, EpochRecord, Sample, TrainConfig, TrainReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
}
