//! Dual-expert fusion network: Siamese encoder, per-scale reliability gating,
//! spatial and wavelet experts, gradient-conditioned mixer, residual decoder.

mod config;
mod net;

pub use config::{ExpertSwitches, ModelConfig};
pub use net::{
    pad_reflect, wavelet_expert, wavelet_expert_bands, Embeddings, ExpertProbe, ExpertTrace, FusionNet, FusionOutput, ScaleDiagnostics,
    TrainingOutput, MULTIPLE,
};

use thiserror::Error;

use crate::nn::ParamError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("checkpoint parameters do not match the configuration: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
