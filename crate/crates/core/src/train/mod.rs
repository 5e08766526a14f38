//! Objective, optimizer, schedule, and the epoch loop.

mod loss;
mod optim;

pub use loss::{bce_loss, bce_with_logits, sigmoid};
pub use optim::{adamw_step, clip_gradients, lr_at, AdamState, AdamWConfig, Grads, Schedule};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_jsonl, ReidDataset};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write_json;
use crate::model::{resample_points, rtmm_grad, save_checkpoint, ReidModel};
use crate::rng::keyed_rng;
use crate::sampling::{even_epoch, uniform_epoch, FallbackCounts, PairSample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Even,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub sampler: SamplerKind,
    /// Write `checkpoint.prid` every this many steps; 0 disables.
    pub checkpoint_every: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 3e-4,
            weight_decay: 0.01,
            clip_norm: 1.0,
            batch_size: 256,
            epochs: 100,
            schedule: Schedule::default(),
            seed: 0,
            sampler: SamplerKind::Even,
            checkpoint_every: 500,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(s.step_ratio_up > 0.0 && s.step_ratio_up < 1.0) {
            return bad("schedule.step_ratio_up must lie strictly between 0 and 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.lr_base > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr_base must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_objects: usize) -> usize {
        n_objects.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_objects: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n_objects);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Fraction of the batch on the right side of 0.5.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub fallbacks: FallbackCounts,
    #[serde(skip)]
    pub history: Vec<StepMetrics>,
}

/// Both sides of a pair resampled to `n` points with per-side seeds.
pub fn pair_tensors(ds: &ReidDataset, pair: &PairSample, n: usize, seed: u64, key: &[&[u8]]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let side = |id: &str, tag: &[u8]| -> Result<Tensor<f32>> {
        let obs = ds
            .by_id(id)
            .ok_or_else(|| Error::Input(format!("observation {id} is not in the dataset")))?;
        let mut parts = key.to_vec();
        parts.push(tag);
        let s: u64 = keyed_rng(seed, &parts).gen();
        resample_points(&obs.points, n, s)
    };
    Ok((side(&pair.obs_a, b"a")?, side(&pair.obs_b, b"b")?))
}

/// Mean loss, batch accuracy and summed gradients for one batch.
fn batch_gradients(model: &ReidModel, ds: &ReidDataset, batch: &[PairSample], seed: u64, step: usize) -> Result<(f64, f64, Grads)> {
    let n = model.n_points();
    let scale = 1.0 / batch.len() as f64;
    let per_pair: Vec<(f64, f64, Grads)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let step_key = (step as u64).to_le_bytes();
            let idx_key = (i as u64).to_le_bytes();
            let (a, b) = pair_tensors(ds, pair, n, seed, &[b"train", &step_key, &idx_key])?;
            let y = pair.label.as_f32() as f64;
            let (z, g) = rtmm_grad(model.config(), model.params(), &a, &b, |z| {
                ((sigmoid(z as f64) - y) * scale) as f32
            })?;
            Ok((z as f64, y, g))
        })
        .collect::<Result<_>>()?;

    let logits: Vec<f64> = per_pair.iter().map(|p| p.0).collect();
    let labels: Vec<f64> = per_pair.iter().map(|p| p.1).collect();
    let (loss, _) = bce_with_logits(&logits, &labels)?;
    let correct = logits.iter().zip(&labels).filter(|(z, y)| (**z >= 0.0) == (**y == 1.0)).count();

    let mut iter = per_pair.into_iter();
    let (_, _, mut total) = iter.next().ok_or(Error::Empty { op: "batch" })?;
    for (_, _, g) in iter {
        for (name, acc) in total.iter_mut() {
            for (a, v) in acc.iter_mut().zip(&g[name]) {
                *a += v;
            }
        }
    }
    Ok((loss, correct as f64 * scale, total))
}

fn persist(model: &ReidModel, history: &[StepMetrics], out_dir: Option<&Path>, name: &str) -> Result<()> {
    if let Some(dir) = out_dir {
        save_checkpoint(model, &dir.join(name))?;
        write_jsonl(&dir.join("metrics.jsonl"), history)?;
    }
    Ok(())
}

/// Trains `model` in place.
///
/// With an output directory this writes `model.json`, `metrics.jsonl`, a
/// periodic `checkpoint.prid` and the final `final.prid`. A non-finite loss
/// stops training; the parameters from before that step are written to
/// `checkpoint.prid`.
pub fn train(model: &mut ReidModel, ds: &ReidDataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let n_objects = ds.n_objects();
    if n_objects == 0 {
        return Err(Error::Input("training needs at least one object".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        atomic_write_json(&dir.join("model.json"), &model.config().resolved())?;
    }
    let total = cfg.total_steps(n_objects);
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut state = AdamState::default();
    let mut history: Vec<StepMetrics> = Vec::with_capacity(total);
    let mut fallbacks = FallbackCounts::default();
    let mut step = 0;
    let mut epochs = 0;

    'epochs: for epoch in 0..cfg.epochs {
        if step >= total {
            break;
        }
        let sample = match cfg.sampler {
            SamplerKind::Even => even_epoch(ds, cfg.seed, epoch as u64),
            SamplerKind::Uniform => uniform_epoch(ds, cfg.seed, epoch as u64),
        };
        fallbacks = fallbacks.merge(sample.fallbacks);
        let mut pairs = sample.pairs;
        pairs.shuffle(&mut keyed_rng(cfg.seed, &[b"shuffle", &(epoch as u64).to_le_bytes()]));
        epochs += 1;
        for batch in pairs.chunks(cfg.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let lr = lr_at(step, total, cfg.lr_base, &cfg.schedule)?;
            let (loss, accuracy, mut grads) = batch_gradients(model, ds, batch, cfg.seed, step)?;
            if !loss.is_finite() {
                persist(model, &history, out_dir, "checkpoint.prid")?;
                return Err(Error::NonFinite { what: "loss", step });
            }
            let grad_norm = clip_gradients(&mut grads, cfg.clip_norm);
            if !grad_norm.is_finite() {
                persist(model, &history, out_dir, "checkpoint.prid")?;
                return Err(Error::NonFinite { what: "gradient", step });
            }
            adamw_step(model.params_mut(), &grads, &mut state, lr, &adam)?;
            history.push(StepMetrics {
                step,
                epoch,
                loss,
                lr,
                grad_norm,
                accuracy,
            });
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                persist(model, &history, out_dir, "checkpoint.prid")?;
            }
        }
    }
    persist(model, &history, out_dir, "final.prid")?;
    Ok(TrainReport {
        steps: step,
        epochs,
        final_loss: history.last().map_or(f64::NAN, |m| m.loss),
        fallbacks,
        history,
    })
}
