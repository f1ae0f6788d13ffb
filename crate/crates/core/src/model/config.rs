use serde::{Deserialize, Serialize};

use super::ModelError;

/// Which fusion experts take part in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSwitches {
    /// Spatial (local + dilated convolution) expert.
    pub use_gce: bool,
    /// Wavelet sub-band expert.
    pub use_we: bool,
    /// Learned gradient-conditioned mixer; plain averaging when off.
    pub use_sgm: bool,
}

impl Default for ExpertSwitches {
    fn default() -> Self {
        Self {
            use_gce: true,
            use_we: true,
            use_sgm: true,
        }
    }
}

impl ExpertSwitches {
    /// The mixer only exists when it has two experts to arbitrate between.
    pub fn mixer_active(&self) -> bool {
        self.use_gce && self.use_we && self.use_sgm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channel count of each of the four encoder stages.
    pub widths: [usize; 4],
    pub eca_kernel: usize,
    pub projection_dim: usize,
    /// Hidden width of the two reconstruction heads.
    pub recon_width: usize,
    /// Scale of the bounded residual added to the source average.
    pub residual_scale: f64,
    pub reliability_eps: f64,
    pub experts: ExpertSwitches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size network, widths 16/32/64/128.
    pub fn full() -> Self {
        Self {
            widths: [16, 32, 64, 128],
            eca_kernel: 3,
            projection_dim: 128,
            recon_width: 16,
            residual_scale: 0.5,
            reliability_eps: 1e-6,
            experts: ExpertSwitches::default(),
        }
    }

    /// Laptop-scale network, widths 8/16/32/64.
    pub fn desk() -> Self {
        Self {
            widths: [8, 16, 32, 64],
            recon_width: 8,
            ..Self::full()
        }
    }

    /// Tiny network used for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            widths: [2, 4, 8, 16],
            projection_dim: 8,
            recon_width: 2,
            ..Self::full()
        }
    }

    pub fn with_experts(mut self, experts: ExpertSwitches) -> Self {
        self.experts = experts;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.contains(&0) {
            return Err(ModelError::Config("stage widths must be positive".into()));
        }
        if self.eca_kernel % 2 == 0 {
            return Err(ModelError::Config(format!("ECA kernel {} must be odd", self.eca_kernel)));
        }
        if self.projection_dim == 0 || self.recon_width == 0 {
            return Err(ModelError::Config("projection and reconstruction widths must be positive".into()));
        }
        if !(self.residual_scale >= 0.0) || !(self.reliability_eps > 0.0) {
            return Err(ModelError::Config("residual scale must be ≥ 0 and eps > 0".into()));
        }
        if !self.experts.use_gce && !self.experts.use_we {
            return Err(ModelError::Config("at least one fusion expert must be enabled".into()));
        }
        Ok(())
    }
}
