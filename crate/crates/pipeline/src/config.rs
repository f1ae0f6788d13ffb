//! Run configuration, read from JSON with unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use medfuse_core::losses::LossWeights;
use medfuse_core::model::{ExpertSwitches, ModelConfig, MULTIPLE};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentFlags {
    pub hflip: bool,
    pub vflip: bool,
    /// Rotation by a random multiple of 90°.
    pub rot90: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            rot90: true,
        }
    }
}

impl AugmentFlags {
    pub const NONE: Self = Self {
        hflip: false,
        vflip: false,
        rot90: false,
    };
}

/// Per-term on/off switches applied on top of the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossToggles {
    pub avg: bool,
    pub grad: bool,
    pub cc: bool,
    pub mi: bool,
    pub rec: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            avg: true,
            grad: true,
            cc: true,
            mi: true,
            rec: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: u64,
    /// Side of the square training crops.
    pub patch_size: usize,
    /// Images whose side differs are resized (bilinear) to this square size.
    pub image_size: usize,
    pub seed: u64,
    pub augment: AugmentFlags,
    pub loss_weights: LossWeights,
    pub loss_terms: LossToggles,
    pub experts: ExpertSwitches,
    pub widths: [usize; 4],
    /// Hard cap on optimizer steps, applied after the epoch count.
    pub max_steps: Option<u64>,
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 8,
            epochs: 100,
            patch_size: 256,
            image_size: 256,
            seed: 0,
            augment: AugmentFlags::default(),
            loss_weights: LossWeights::default(),
            loss_terms: LossToggles::default(),
            experts: ExpertSwitches::default(),
            widths: ModelConfig::full().widths,
            max_steps: None,
            manifest: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(json_err(path))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain data serializes")
    }

    /// Laptop-scale profile: 64×64 patches, widths 8/16/32/64, exactly 200
    /// steps. Optimizer settings are left as configured.
    pub fn desk(mut self) -> Self {
        self.patch_size = 64;
        self.image_size = 64;
        self.widths = ModelConfig::desk().widths;
        // Every epoch has at least one step, so 200 epochs always reach the cap.
        self.epochs = 200;
        self.max_steps = Some(200);
        self
    }

    /// Weights after applying the term toggles.
    pub fn effective_weights(&self) -> LossWeights {
        let t = self.loss_terms;
        let w = self.loss_weights;
        let on = |flag: bool, v: f64| if flag { v } else { 0.0 };
        LossWeights {
            avg: on(t.avg, w.avg),
            grad: on(t.grad, w.grad),
            cc: on(t.cc, w.cc),
            mi: on(t.mi, w.mi),
            rec: on(t.rec, w.rec),
            tau: w.tau,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            widths: self.widths,
            recon_width: self.widths[0],
            experts: self.experts,
            ..ModelConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let w = self.effective_weights();
        w.validate()?;
        if w.mi > 0.0 && self.batch_size < 2 {
            return bad("the contrastive term needs batch_size ≥ 2 for negatives".into());
        }
        if self.epochs == 0 || self.max_steps == Some(0) {
            return bad("training needs at least one step".into());
        }
        if self.patch_size == 0 || self.patch_size % MULTIPLE != 0 {
            return bad(format!("patch_size {} is not a positive multiple of {MULTIPLE}", self.patch_size));
        }
        if self.patch_size > self.image_size {
            return bad(format!(
                "patch_size {} exceeds image_size {}",
                self.patch_size, self.image_size
            ));
        }
        self.model_config().validate()?;
        Ok(())
    }
}
