use std::path::PathBuf;

use medfuse_core::checkpoint::CheckpointError;
use medfuse_core::losses::{LossBreakdown, LossError};
use medfuse_core::metrics::MetricError;
use medfuse_core::model::ModelError;
use medfuse_core::nn::ParamError;
use medfuse_core::plane::PlaneError;
use medfuse_core::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("pair `{id}`: {reason}")]
    Pair { id: String, reason: String },
    #[error("checkpoint is incompatible: {0}")]
    Incompatible(String),
    #[error("non-finite loss at step {step}; last finite breakdown: {}", describe(.last))]
    NonFinite {
        step: u64,
        last: Option<LossBreakdown>,
    },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Plane(#[from] PlaneError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn describe(b: &Option<LossBreakdown>) -> String {
    match b {
        None => "none (diverged on the first step)".to_string(),
        Some(b) => {
            let mut s = format!("total={}", b.total);
            for (name, v) in b.terms() {
                if let Some(v) = v {
                    s.push_str(&format!(" {name}={v}"));
                }
            }
            s
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Json { path, source }
}
