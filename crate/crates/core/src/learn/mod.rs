//! Minimal neural core for CSI regression.
//!
//! Everything runs per sample in f64 with hand-written backward passes. Two
//! heads are provided ([`mlp::Mlp`], [`vae::Vae`]); both are constructed
//! through [`ModelRegistry`] from a serializable [`ModelSpec`].

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod mlp;
pub mod model;
mod nets;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod vae;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
pub use loss::{nmse, smooth_l1, smooth_l1_grad, NmseMode};
pub use model::{CsiModel, ModelInput, ModelIo, ModelRegistry, ModelSpec};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use tensor::{ParamSet, Tensor};
pub use train::{train, EpochMetrics, Metrics, TrainConfig, TrainOutcome};

use crate::binio::FormatError;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("ground-truth sample {index} has zero power; NMSE is undefined")]
    ZeroPowerTarget { index: usize },
    #[error("non-finite gradient for parameter `{param}` at element {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("non-finite latent log-variance at index {index} ({value})")]
    NonFiniteLogvar { index: usize, value: f64 },
    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("unknown model `{name}` (registered: {known})")]
    UnknownModel { name: String, known: String },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("input mismatch: {0}")]
    InputMismatch(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Format(#[from] FormatError),
}
