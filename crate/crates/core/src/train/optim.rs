use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;

pub type Grads = BTreeMap<String, Vec<f32>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub target_ratio_up: f64,
    pub target_ratio_down: f64,
    pub step_ratio_up: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            target_ratio_up: 10.0,
            target_ratio_down: 1e-4,
            step_ratio_up: 0.4,
        }
    }
}

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    from + (to - from) * 0.5 * (1.0 - (std::f64::consts::PI * frac).cos())
}

/// One-cycle learning rate: cosine ramp from `base` up to
/// `base·target_ratio_up`, then cosine decay to `base·target_ratio_down`.
pub fn lr_at(step: usize, total_steps: usize, base: f64, s: &Schedule) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Domain(format!("step {step} beyond schedule length {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(base);
    }
    let peak = base * s.target_ratio_up;
    let up = s.step_ratio_up * total_steps as f64;
    let t = step as f64;
    Ok(if t <= up {
        cosine(base, peak, t / up)
    } else {
        cosine(peak, base * s.target_ratio_down, (t - up) / (total_steps as f64 - up))
    })
}

/// Scales gradients in place so the global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flatten()
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        grads.values_mut().flatten().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments, zero until the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

/// Decoupled weight decay followed by a bias-corrected Adam update.
///
/// Any non-finite gradient aborts before a single parameter is touched.
pub fn adamw_step(params: &mut ParamSet<f32>, grads: &Grads, state: &mut AdamState, lr: f64, cfg: &AdamWConfig) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("gradient for unknown parameter {name}")))?;
        if p.len() != g.len() {
            return Err(Error::shape("adamw_step", format!("{name}: {} grads for {} values", g.len(), p.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                step: state.step as usize,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above").data_mut();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        for i in 0..g.len() {
            let gi = g[i] as f64;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mut theta = p[i] as f64;
            theta -= lr * cfg.weight_decay * theta;
            theta -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            p[i] = theta as f32;
        }
    }
    Ok(())
}
