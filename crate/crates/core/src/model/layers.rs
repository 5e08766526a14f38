//! Graph builders for the encoders, the attention block and the head.
//!
//! Parameters are looked up by hierarchical name from a [`Binding`], so the
//! same builders serve training, inference and the `f64` gradient checks.

use std::collections::BTreeMap;

use super::config::{EncoderConfig, EncoderKind, ModelConfig};
use super::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Scalar, Tape, Tensor};

pub(crate) const LN_EPS: f64 = 1e-5;
const ATTN_EPS: f64 = 1e-6;

/// Parameter nodes recorded on one tape.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    ids: BTreeMap<String, NodeId>,
}

impl Binding {
    /// Records every parameter as a leaf; `grad` controls gradient tracking.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, params: &ParamSet<T>, grad: bool) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (name, t) in params {
            let id = tape.leaf(t.clone().with_requires_grad(grad))?;
            ids.insert(name.clone(), id);
        }
        Ok(Self { ids })
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.ids.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// `Linear → [LN] → ReLU` per hidden width, then a final `Linear`.
pub fn mlp<T: Scalar>(tape: &mut Tape<T>, p: &Binding, prefix: &str, x: NodeId, hidden: usize, norm: bool) -> Result<NodeId> {
    let mut h = x;
    for i in 0..hidden {
        h = tape.linear(h, p.get(&format!("{prefix}.l{i}.w"))?, Some(p.get(&format!("{prefix}.l{i}.b"))?))?;
        if norm {
            h = tape.layer_norm(
                h,
                p.get(&format!("{prefix}.ln{i}.gain"))?,
                p.get(&format!("{prefix}.ln{i}.bias"))?,
                LN_EPS,
            )?;
        }
        h = tape.relu(h);
    }
    tape.linear(h, p.get(&format!("{prefix}.out.w"))?, Some(p.get(&format!("{prefix}.out.b"))?))
}

/// k nearest neighbours of every point (itself included), nearest first.
pub fn knn(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .map(|p| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(j, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2), j))
                .collect();
            if k < d.len() {
                d.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
                d.truncate(k);
            }
            d.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Edge features `[x_i, x_j − x_i]` for each point's neighbourhood, row-grouped by `i`.
fn edge_features<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, _) = x.dims2()?;
    let pts: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            let r = x.row(i);
            [r[0].to_f64(), r[1].to_f64(), r[2].to_f64()]
        })
        .collect();
    let mut out = Vec::with_capacity(n * k * 6);
    for (i, nbrs) in knn(&pts, k).into_iter().enumerate() {
        let xi = x.row(i);
        for j in nbrs {
            let xj = x.row(j);
            out.extend_from_slice(xi);
            out.extend((0..3).map(|c| xj[c] - xi[c]));
        }
    }
    Tensor::new(vec![n * k, 6], out)
}

/// Per-point features `n × d` for an `n × 3` cloud.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, p: &Binding, cfg: &EncoderConfig, points: &Tensor<T>) -> Result<NodeId> {
    let (n, c) = points.dims2()?;
    if c != 3 {
        return Err(Error::shape("encode", format!("expected n x 3 points, got {n}x{c}")));
    }
    match cfg.kind {
        EncoderKind::PointnetLite => {
            let x = tape.constant(points.clone())?;
            mlp(tape, p, "encoder", x, cfg.hidden.len(), true)
        }
        EncoderKind::EdgeconvLite => {
            if n < cfg.k {
                return Err(Error::Config(format!("edge encoder needs at least k={} points, got {n}", cfg.k)));
            }
            let edges = tape.constant(edge_features(points, cfg.k)?)?;
            let h = mlp(tape, p, "encoder", edges, cfg.hidden.len(), true)?;
            tape.group_max(h, cfg.k)
        }
    }
}

/// Linear cross-attention with the `elu + 1` feature map.
pub fn lca<T: Scalar>(tape: &mut Tape<T>, p: &Binding, prefix: &str, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    if tape.value(k).dims2()?.0 == 0 {
        return Err(Error::Empty { op: "lca" });
    }
    let proj = |tape: &mut Tape<T>, x: NodeId, name: &str| -> Result<NodeId> {
        tape.linear(x, p.get(&format!("{prefix}.{name}.w"))?, Some(p.get(&format!("{prefix}.{name}.b"))?))
    };
    let q = proj(tape, q, "q")?;
    let k = proj(tape, k, "k")?;
    let v = proj(tape, v, "v")?;
    let fq = tape.elu_plus_one(q);
    let fk = tape.elu_plus_one(k);
    let kv = tape.matmul_tn(fk, v)?;
    let num = tape.matmul(fq, kv)?;
    let ksum = tape.sum_rows(fk);
    let den = tape.matmul_nt(fq, ksum)?;
    let den = tape.clamp_min(den, ATTN_EPS);
    let out = tape.div_rows(num, den)?;
    proj(tape, out, "o")
}

/// One cross-feature augmentation block updating `f1` from `(f2, x2)`.
///
/// `_x1` is accepted for interface symmetry and unused.
#[allow(clippy::too_many_arguments)]
pub fn cfa_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Binding,
    cfg: &ModelConfig,
    layer: usize,
    f1: NodeId,
    _x1: NodeId,
    f2: NodeId,
    x2: NodeId,
) -> Result<NodeId> {
    let r = &cfg.rtmm;
    let pre = format!("cfa.{layer}");
    let pos = mlp(tape, p, &format!("{pre}.pos"), x2, r.pos_mlp_widths().len(), false)?;
    let kv = tape.add(f2, pos)?;
    let l = lca(tape, p, &format!("{pre}.attn"), f1, kv, kv)?;
    let l = tape.layer_norm(l, p.get(&format!("{pre}.ln1.gain"))?, p.get(&format!("{pre}.ln1.bias"))?, LN_EPS)?;
    let cat = tape.concat_cols(l, f1)?;
    let m = mlp(tape, p, &format!("{pre}.mlp"), cat, r.cfa_mlp_widths().len(), false)?;
    let m = tape.layer_norm(m, p.get(&format!("{pre}.ln2.gain"))?, p.get(&format!("{pre}.ln2.bias"))?, LN_EPS)?;
    tape.add(m, f1)
}

/// Full matching graph; returns the `1 × 1` logit node.
pub fn rtmm<T: Scalar>(tape: &mut Tape<T>, p: &Binding, cfg: &ModelConfig, x1: &Tensor<T>, x2: &Tensor<T>) -> Result<NodeId> {
    let mut f1 = encode(tape, p, &cfg.encoder, x1)?;
    let mut f2 = encode(tape, p, &cfg.encoder, x2)?;
    let c1 = tape.constant(x1.clone())?;
    let c2 = tape.constant(x2.clone())?;
    for layer in 0..cfg.rtmm.layers {
        let n1 = cfa_forward(tape, p, cfg, layer, f1, c1, f2, c2)?;
        let n2 = cfa_forward(tape, p, cfg, layer, f2, c2, f1, c1)?;
        (f1, f2) = (n1, n2);
    }
    let both = tape.concat_rows(f1, f2)?;
    let pooled = tape.pool_concat(both)?;
    let res = mlp(tape, p, "head.res", pooled, cfg.rtmm.mlp_res_widths().len(), false)?;
    let h = tape.add(pooled, res)?;
    tape.linear(h, p.get("head.out.w")?, Some(p.get("head.out.b")?))
}
