//! Parameter management, layers and the optimizer.

pub mod adam;
pub mod blocks;
pub mod params;

pub use adam::AdamState;
pub use blocks::{Conv, Eca, Linear, ProjectionHead, ResBlock};
pub use params::{kaiming_bound, ModelParams, Param, ParamBuilder, ParamError};
