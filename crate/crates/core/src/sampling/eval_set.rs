use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassPools, Label, PairSample};
use crate::dataset::{read_jsonl, write_jsonl, ReidDataset};
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub pairs: Vec<PairSample>,
    /// `(n_a, n_b)` per pair.
    pub densities: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetStats {
    /// Objects that contributed at least one positive.
    pub objects: usize,
    pub positives: usize,
    pub negatives: usize,
    /// Observations below `min_points`.
    pub filtered_observations: usize,
    /// Positives dropped because no same-bucket negative existed.
    pub dropped_positives: usize,
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub obs_a: String,
    pub obs_b: String,
    pub label: Label,
    pub class: String,
    pub n_a: usize,
    pub n_b: usize,
}

/// Balanced, density-matched evaluation pairs.
///
/// Each object yields up to `max_pos` distinct positives; every positive
/// `(o1, o2)` is paired with a negative `(o1, o2')` where `o2'` lies in the
/// same density bucket as `o2`.
pub fn build_eval_set(ds: &ReidDataset, max_pos: usize, min_points: usize, seed: u64) -> (EvalSet, EvalSetStats) {
    let pools = ClassPools::build(ds, min_points);
    let mut stats = EvalSetStats {
        filtered_observations: ds.observations().iter().filter(|o| o.n_points() < min_points).count(),
        ..EvalSetStats::default()
    };
    let mut pairs = Vec::new();
    let id = |p: usize| ds.get(p).observation_id.clone();

    for (object_id, members) in ds.index() {
        let eligible: Vec<usize> = members.iter().copied().filter(|&p| ds.get(p).n_points() >= min_points).collect();
        let m = eligible.len();
        if m < 2 {
            continue;
        }
        let mut rng = keyed_rng(seed, &[b"eval", object_id.as_bytes()]);
        let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        let mut chosen: Vec<usize> = if all.len() <= max_pos {
            (0..all.len()).collect()
        } else {
            index::sample(&mut rng, all.len(), max_pos).into_vec()
        };
        chosen.sort_unstable();

        let class = &ds.class_of()[object_id];
        let empty = ClassPools::default();
        let pool = pools.get(class).unwrap_or(&empty);
        let mut emitted = 0;
        for k in chosen {
            let (i, j) = all[k];
            let (o1, o2) = (eligible[i], eligible[j]);
            let bucket = ds.get(o2).bucket();
            let tp: Vec<usize> = pool
                .tp
                .get(&bucket)
                .map(|v| {
                    v.iter()
                        .copied()
                        .filter(|&p| ds.get(p).object_id.as_deref() != Some(object_id.as_str()))
                        .collect()
                })
                .unwrap_or_default();
            let fp: &[usize] = pool.fp.get(&bucket).map(Vec::as_slice).unwrap_or(&[]);
            let use_fp = match (tp.is_empty(), fp.is_empty()) {
                (true, true) => {
                    stats.dropped_positives += 1;
                    continue;
                }
                (true, false) => true,
                (false, true) => false,
                (false, false) => rng.gen_bool(0.5),
            };
            let neg = if use_fp { fp.choose(&mut rng) } else { tp.choose(&mut rng) };
            let neg = *neg.expect("pool nonempty");
            pairs.push(PairSample {
                obs_a: id(o1),
                obs_b: id(o2),
                label: Label::Match,
                class: class.clone(),
                is_fp_pair: false,
            });
            pairs.push(PairSample {
                obs_a: id(o1),
                obs_b: id(neg),
                label: Label::NonMatch,
                class: class.clone(),
                is_fp_pair: use_fp,
            });
            emitted += 1;
        }
        if emitted > 0 {
            stats.objects += 1;
            stats.positives += emitted;
            stats.negatives += emitted;
        }
    }
    let densities = pairs
        .iter()
        .map(|p| {
            let n = |o: &str| ds.by_id(o).map_or(0, |o| o.n_points());
            (n(&p.obs_a), n(&p.obs_b))
        })
        .collect();
    (EvalSet { pairs, densities }, stats)
}

pub fn write_eval_set(set: &EvalSet, path: &Path) -> Result<()> {
    let records: Vec<PairRecord> = set
        .pairs
        .iter()
        .zip(&set.densities)
        .map(|(p, &(n_a, n_b))| PairRecord {
            obs_a: p.obs_a.clone(),
            obs_b: p.obs_b.clone(),
            label: p.label,
            class: p.class.clone(),
            n_a,
            n_b,
        })
        .collect();
    write_jsonl(path, &records)
}

/// Reads `pairs.jsonl`, resolving ids against `ds`; the FP flag is taken from
/// the dataset.
pub fn read_eval_set(path: &Path, ds: &ReidDataset) -> Result<EvalSet> {
    let records: Vec<PairRecord> = read_jsonl(path)?;
    let mut pairs = Vec::with_capacity(records.len());
    let mut densities = Vec::with_capacity(records.len());
    for (line, r) in records.iter().enumerate() {
        let lookup = |id: &str| {
            ds.by_id(id).ok_or_else(|| {
                Error::Input(format!(
                    "{}: line {}: observation {id} is not in the dataset",
                    path.display(),
                    line + 1
                ))
            })
        };
        let (a, b) = (lookup(&r.obs_a)?, lookup(&r.obs_b)?);
        pairs.push(PairSample {
            obs_a: r.obs_a.clone(),
            obs_b: r.obs_b.clone(),
            label: r.label,
            class: r.class.clone(),
            is_fp_pair: a.is_fp() || b.is_fp(),
        });
        densities.push((r.n_a, r.n_b));
    }
    Ok(EvalSet { pairs, densities })
}
