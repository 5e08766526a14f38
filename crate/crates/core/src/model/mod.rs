//! Point encoders, the symmetric matching head, and checkpoints.
//!
//! A model is a [`ModelConfig`] plus a flat map of named parameters. Weights
//! are stored `in × out` and applied as `x·W + b`.

mod checkpoint;
mod config;
mod layers;

pub use checkpoint::{decode_params, encode_params, load_checkpoint, read_params, save_checkpoint, MAGIC};
pub use config::{EncoderConfig, EncoderKind, ModelConfig, RtmmConfig};
pub use layers::{cfa_forward, encode, knn, lca, mlp, rtmm, Binding};

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::tensor::{Scalar, Tape, Tensor};

/// Named parameters in lexicographic order.
pub type ParamSet<T = f32> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    FanIn(usize),
    Zero,
    One,
}

fn push_linear(specs: &mut Vec<(String, Vec<usize>, Init)>, name: &str, fan_in: usize, out: usize) {
    specs.push((format!("{name}.w"), vec![fan_in, out], Init::FanIn(fan_in)));
    specs.push((format!("{name}.b"), vec![out], Init::Zero));
}

fn push_norm(specs: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    specs.push((format!("{name}.gain"), vec![d], Init::One));
    specs.push((format!("{name}.bias"), vec![d], Init::Zero));
}

fn push_mlp(specs: &mut Vec<(String, Vec<usize>, Init)>, prefix: &str, input: usize, hidden: &[usize], out: usize, norm: bool) {
    let mut width = input;
    for (i, &h) in hidden.iter().enumerate() {
        push_linear(specs, &format!("{prefix}.l{i}"), width, h);
        if norm {
            push_norm(specs, &format!("{prefix}.ln{i}"), h);
        }
        width = h;
    }
    push_linear(specs, &format!("{prefix}.out"), width, out);
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.rtmm.d;
    let mut specs = Vec::new();
    let enc_in = match cfg.encoder.kind {
        EncoderKind::PointnetLite => 3,
        EncoderKind::EdgeconvLite => 6,
    };
    push_mlp(&mut specs, "encoder", enc_in, &cfg.encoder.hidden, d, true);
    for l in 0..cfg.rtmm.layers {
        let pre = format!("cfa.{l}");
        push_mlp(&mut specs, &format!("{pre}.pos"), 3, &cfg.rtmm.pos_mlp_widths(), d, false);
        for proj in ["q", "k", "v", "o"] {
            push_linear(&mut specs, &format!("{pre}.attn.{proj}"), d, d);
        }
        push_norm(&mut specs, &format!("{pre}.ln1"), d);
        push_mlp(&mut specs, &format!("{pre}.mlp"), 2 * d, &cfg.rtmm.cfa_mlp_widths(), d, false);
        push_norm(&mut specs, &format!("{pre}.ln2"), d);
    }
    push_mlp(&mut specs, "head.res", 2 * d, &cfg.rtmm.mlp_res_widths(), 2 * d, false);
    push_linear(&mut specs, "head.out", 2 * d, 1);
    specs
}

/// Expected parameter shapes for a configuration.
pub fn param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    param_specs(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReidModel {
    config: ModelConfig,
    params: ParamSet<f32>,
}

impl ReidModel {
    /// Fresh model with seeded fan-in uniform weights, zero biases, unit norms.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape, init) in param_specs(&config) {
            let len = shape.iter().product();
            let data = match init {
                Init::Zero => vec![0.0; len],
                Init::One => vec![1.0; len],
                Init::FanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f32).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    (0..len).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters after checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<f32>) -> Result<Self> {
        config.validate()?;
        let expected = param_shapes(&config);
        for (name, t) in &params {
            match expected.get(name) {
                None => return Err(Error::Checkpoint(format!("unknown parameter {name} for this configuration"))),
                Some(shape) if shape.as_slice() != t.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name}: checkpoint shape {:?}, configuration expects {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(name) = expected.keys().find(|n| !params.contains_key(*n)) {
            return Err(Error::Checkpoint(format!("parameter {name} missing from checkpoint")));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn n_points(&self) -> usize {
        self.config.encoder.n_points
    }

    /// Match logit for two resampled `n × 3` clouds.
    pub fn score(&self, x1: &Tensor<f32>, x2: &Tensor<f32>) -> Result<f32> {
        rtmm_logit(&self.config, &self.params, x1, x2)
    }
}

/// Logit for one pair under arbitrary-precision parameters.
pub fn rtmm_logit<T: Scalar>(cfg: &ModelConfig, params: &ParamSet<T>, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<T> {
    let mut tape = Tape::new();
    let p = Binding::bind(&mut tape, params, false)?;
    let out = rtmm(&mut tape, &p, cfg, x1, x2)?;
    Ok(tape.value(out).data()[0])
}

/// Logit and parameter gradients of `upstream(logit) · logit`.
///
/// `upstream` maps the logit to the derivative of the caller's loss with
/// respect to it.
pub fn rtmm_grad<T: Scalar>(
    cfg: &ModelConfig,
    params: &ParamSet<T>,
    x1: &Tensor<T>,
    x2: &Tensor<T>,
    upstream: impl FnOnce(T) -> T,
) -> Result<(T, BTreeMap<String, Vec<T>>)> {
    let mut tape = Tape::new();
    let p = Binding::bind(&mut tape, params, true)?;
    let out = rtmm(&mut tape, &p, cfg, x1, x2)?;
    let logit = tape.value(out).data()[0];
    let grads = tape.backward_with(out, vec![upstream(logit)])?;
    let mut named = BTreeMap::new();
    for (name, id) in p.iter() {
        let g = grads
            .slice(id)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); params[name].len()]);
        named.insert(name.to_string(), g);
    }
    Ok((logit, named))
}

/// Logits for many pairs; pairs are scored in parallel, results in input order.
pub fn score_batch(model: &ReidModel, pairs: &[(Tensor<f32>, Tensor<f32>)]) -> Result<Vec<f32>> {
    pairs.par_iter().map(|(a, b)| model.score(a, b)).collect()
}

/// Brings a cloud to exactly `n` points.
///
/// Larger clouds are subsampled without replacement. Smaller clouds keep every
/// original point and are topped up with uniform draws with replacement.
pub fn resample_points(points: &[Point], n: usize, seed: u64) -> Result<Tensor<f32>> {
    if points.is_empty() {
        return Err(Error::Domain("cannot resample an empty point set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = match points.len() {
        m if m > n => index::sample(&mut rng, m, n).into_vec(),
        m if m == n => (0..m).collect(),
        m => (0..m).chain((m..n).map(|_| rng.gen_range(0..m))).collect(),
    };
    let data = picked.iter().flat_map(|&i| points[i]).collect();
    Tensor::new(vec![n, 3], data)
}
