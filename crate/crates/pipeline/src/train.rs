//! Mini-batch training with per-step logging, checkpointing and resume.
//!
//! Step `k` (1-based) draws its crops and transforms from a generator keyed by
//! `(seed, k − 1)` and its batch membership from a per-epoch permutation, so
//! an interrupted run resumed from its last checkpoint follows the same
//! trajectory as an uninterrupted one.

use std::fs;
use std::path::{Path, PathBuf};

use medfuse_core::checkpoint::{self, Entry, Sidecar};
use medfuse_core::losses::{loss_total, LossBreakdown, LossInputs, LossWeights};
use medfuse_core::model::FusionNet;
use medfuse_core::nn::AdamState;
use medfuse_core::plane::Plane;
use medfuse_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, step_rng};
use crate::config::RunConfig;
use crate::data::{Manifest, Split};
use crate::error::{io_err, PipelineError, Result};

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const LOG_HEADER: [&str; 8] = ["step", "epoch", "total", "avg", "grad", "cc", "mi", "rec"];

/// Optimizer moments live next to the checkpoint as `<file>.adam`, in the
/// same container format with `m.<name>` and `v.<name>` entries.
pub fn adam_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".adam");
    PathBuf::from(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: u64,
    /// 0-based epoch the step belongs to.
    pub epoch: u64,
    pub loss: LossBreakdown,
}

/// Extra state stored in the sidecar's `training` object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub config: RunConfig,
    /// Lowest epoch-mean total loss so far.
    pub best_total: Option<f64>,
    pub color: String,
}

pub const COLOR_CONVENTION: &str =
    "fusion on BT.601 luma; chroma of the colour source reinjected at output on request";

pub struct Trainer {
    config: RunConfig,
    weights: LossWeights,
    net: FusionNet<f32>,
    adam: AdamState<f32>,
    pairs: Vec<(Plane, Plane)>,
    step: u64,
    best: Option<f64>,
    last_finite: Option<LossBreakdown>,
    epoch_totals: Vec<f64>,
}

impl Trainer {
    pub fn new(config: RunConfig, pairs: Vec<(Plane, Plane)>) -> Result<Self> {
        config.validate()?;
        let net = FusionNet::new(config.model_config(), config.seed)?;
        Self::assemble(config, pairs, net, None)
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(config: RunConfig, pairs: Vec<(Plane, Plane)>, ckpt: &Path) -> Result<Self> {
        config.validate()?;
        let (params, sidecar) = checkpoint::load(ckpt)?;
        if sidecar.model != config.model_config() {
            return Err(PipelineError::Incompatible(format!(
                "{} was trained with {:?}, the configuration asks for {:?}",
                ckpt.display(),
                sidecar.model,
                config.model_config()
            )));
        }
        let net = FusionNet::from_params(sidecar.model.clone(), params)?;
        let meta: TrainingMeta = serde_json::from_value(sidecar.training.clone())
            .map_err(|e| PipelineError::Incompatible(format!("sidecar training metadata: {e}")))?;
        let mut t = Self::assemble(config, pairs, net, Some(sidecar.step))?;
        t.best = meta.best_total;
        let moments = checkpoint::read_entries(&adam_path(ckpt))?;
        for e in moments {
            let (kind, name) = e
                .name
                .split_once('.')
                .ok_or_else(|| PipelineError::Incompatible(format!("optimizer entry `{}`", e.name)))?;
            let expected = t.net.params().get(name).map(|p| p.numel());
            if expected != Some(e.data.len()) {
                return Err(PipelineError::Incompatible(format!(
                    "optimizer entry `{}` does not match the model",
                    e.name
                )));
            }
            match kind {
                "m" => t.adam.m.insert(name.to_string(), e.data),
                "v" => t.adam.v.insert(name.to_string(), e.data),
                _ => return Err(PipelineError::Incompatible(format!("optimizer entry `{}`", e.name))),
            };
        }
        Ok(t)
    }

    fn assemble(config: RunConfig, pairs: Vec<(Plane, Plane)>, net: FusionNet<f32>, step: Option<u64>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(PipelineError::Manifest("no training pairs".into()));
        }
        for (a, b) in &pairs {
            if a.dims() != b.dims() || a.height() < config.patch_size || a.width() < config.patch_size {
                return Err(PipelineError::Config(format!(
                    "training pairs must be equally sized and at least {0}×{0}, got {1:?} and {2:?}",
                    config.patch_size,
                    a.dims(),
                    b.dims()
                )));
            }
        }
        let mut adam = AdamState::new(config.learning_rate);
        adam.t = step.unwrap_or(0);
        Ok(Self {
            weights: config.effective_weights(),
            config,
            net,
            adam,
            pairs,
            step: step.unwrap_or(0),
            best: None,
            last_finite: None,
            epoch_totals: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn net(&self) -> &FusionNet<f32> {
        &self.net
    }

    pub fn into_net(self) -> FusionNet<f32> {
        self.net
    }

    /// Completed optimizer steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.pairs.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let by_epochs = self.config.epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(by_epochs, |m| m.min(by_epochs))
    }

    pub fn epoch_of(&self, step_index: u64) -> u64 {
        step_index / self.steps_per_epoch()
    }

    /// Inputs of the 0-based step `index`.
    pub fn batch(&self, index: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let n = self.pairs.len();
        let epoch = self.epoch_of(index);
        let slot = (index % self.steps_per_epoch()) as usize;
        let mut order: Vec<usize> = (0..n).collect();
        let mut perm_rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        perm_rng.set_stream(u64::MAX - epoch);
        order.shuffle(&mut perm_rng);
        let mut rng = step_rng(self.config.seed, index);
        let b = self.config.batch_size;
        let (mut xs, mut ys) = (Vec::with_capacity(b), Vec::with_capacity(b));
        for k in 0..b {
            let (a, bb) = &self.pairs[order[(slot * b + k) % n]];
            let (pa, pb) = augment(a, bb, self.config.patch_size, self.config.augment, &mut rng);
            xs.push(pa);
            ys.push(pb);
        }
        let refs = |v: &[Plane]| -> Result<Tensor<f32>> { Ok(Plane::stack(&v.iter().collect::<Vec<_>>())?) };
        Ok((refs(&xs)?, refs(&ys)?))
    }

    /// Loss of the 0-based step `index` under the current parameters, without
    /// updating anything.
    pub fn loss_at(&self, index: u64) -> Result<LossBreakdown> {
        let (i1, i2) = self.batch(index)?;
        let out = self.net.forward_train(&i1, &i2, self.weights.rec > 0.0, self.weights.mi > 0.0)?;
        Ok(loss_total(&LossInputs::from_training(&out, &i1, &i2), &self.weights)?.1)
    }

    /// One forward/backward/update cycle.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let index = self.step;
        let (i1, i2) = self.batch(index)?;
        let out = self.net.forward_train(&i1, &i2, self.weights.rec > 0.0, self.weights.mi > 0.0)?;
        let (loss, breakdown) = loss_total(&LossInputs::from_training(&out, &i1, &i2), &self.weights)?;
        if !breakdown.total.is_finite() {
            return Err(PipelineError::NonFinite {
                step: index + 1,
                last: self.last_finite,
            });
        }
        loss.backward()?;
        self.adam.step(self.net.params())?;
        self.step += 1;
        self.last_finite = Some(breakdown);
        Ok(StepRecord {
            step: self.step,
            epoch: self.epoch_of(index),
            loss: breakdown,
        })
    }

    fn sidecar(&self) -> Sidecar {
        let meta = TrainingMeta {
            config: self.config.clone(),
            best_total: self.best,
            color: COLOR_CONVENTION.to_string(),
        };
        Sidecar::new(
            self.net.config().clone(),
            self.step,
            serde_json::to_value(meta).expect("plain data serializes"),
        )
    }

    /// Parameters, sidecar and optimizer moments.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, self.net.params(), &self.sidecar())?;
        let mut moments = Vec::with_capacity(2 * self.adam.m.len());
        for (prefix, map) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for (name, data) in map {
                moments.push(Entry {
                    name: format!("{prefix}.{name}"),
                    shape: vec![data.len()],
                    data: data.clone(),
                });
            }
        }
        checkpoint::write_entries(&adam_path(path), &moments)?;
        Ok(())
    }

    fn save_params(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, self.net.params(), &self.sidecar())?)
    }

    /// Trains until [`Trainer::total_steps`], writing the log and checkpoints
    /// into `dir`. The latest state goes to `last.ckpt` at the end of every
    /// epoch; `best.ckpt` is refreshed whenever an epoch's mean total loss
    /// improves on the best so far.
    pub fn run(&mut self, dir: &Path) -> Result<TrainReport> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let log_path = dir.join(TRAIN_LOG);
        let mut log = StepLog::open(&log_path, self.step)?;
        let total = self.total_steps();
        let spe = self.steps_per_epoch();
        let mut records = Vec::new();
        while self.step < total {
            let rec = self.train_step()?;
            log.push(&rec)?;
            self.epoch_totals.push(rec.loss.total);
            if rec.step % 10 == 0 || rec.step == total {
                log::info!("step {}/{} total {:.5}", rec.step, total, rec.loss.total);
            }
            records.push(rec);
            if rec.step % spe == 0 || rec.step == total {
                let mean = self.epoch_totals.iter().sum::<f64>() / self.epoch_totals.len() as f64;
                self.epoch_totals.clear();
                if self.best.map_or(true, |b| mean < b) {
                    self.best = Some(mean);
                    self.save_params(&dir.join(BEST_CHECKPOINT))?;
                }
                self.save(&dir.join(LAST_CHECKPOINT))?;
            }
        }
        Ok(TrainReport {
            records,
            steps: self.step,
            best_total: self.best,
            last: dir.join(LAST_CHECKPOINT),
            best: dir.join(BEST_CHECKPOINT),
            log: log_path,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Steps run by this call (after any resume point).
    pub records: Vec<StepRecord>,
    pub steps: u64,
    pub best_total: Option<f64>,
    pub last: PathBuf,
    pub best: PathBuf,
    pub log: PathBuf,
}

struct StepLog {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl StepLog {
    /// Opens the log, dropping rows past `resume_step` left by an interrupted
    /// run so that the file mirrors the checkpoint.
    fn open(path: &Path, resume_step: u64) -> Result<Self> {
        let kept: Vec<csv::StringRecord> = if resume_step > 0 && path.exists() {
            let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
            r.records()
                .filter_map(|rec| rec.ok())
                .filter(|rec| rec.get(0).and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= resume_step))
                .collect()
        } else {
            Vec::new()
        };
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        writer.write_record(LOG_HEADER).map_err(|e| csv_err(path, e))?;
        for rec in &kept {
            writer.write_record(rec).map_err(|e| csv_err(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    fn push(&mut self, r: &StepRecord) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let l = &r.loss;
        let row = [
            r.step.to_string(),
            r.epoch.to_string(),
            l.total.to_string(),
            opt(l.avg),
            opt(l.grad),
            opt(l.cc),
            opt(l.mi),
            opt(l.rec),
        ];
        self.writer.write_record(&row).map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(io_err(&self.path))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

/// Luma planes of the training split at the configured size.
pub fn training_pairs(manifest: &Manifest, config: &RunConfig) -> Result<Vec<(Plane, Plane)>> {
    manifest
        .select(Split::Train)
        .map(|e| manifest.load_pair(e, Some(config.image_size)).map(|p| (p.a, p.b)))
        .collect()
}

/// Loads the manifest named by the configuration, trains from scratch or
/// from `resume`, and writes everything into the configured output folder.
pub fn train(config: &RunConfig, manifest: &Manifest, resume: Option<&Path>) -> Result<TrainReport> {
    let pairs = training_pairs(manifest, config)?;
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(config.clone(), pairs, ckpt)?,
        None => Trainer::new(config.clone(), pairs)?,
    };
    trainer.run(&config.output_dir)
}

/// Moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
