//! Operational shell around the fusion network: data ingestion, training,
//! inference, classical baselines and ablation sweeps.

pub mod ablation;
pub mod augment;
pub mod baseline;
pub mod config;
pub mod data;
pub mod error;
pub mod infer;
pub mod synth;
pub mod train;

pub use error::{PipelineError, Result};
