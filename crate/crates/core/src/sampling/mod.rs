//! Training-time pair samplers and the balanced evaluation-set builder.

mod eval_set;
mod train;

pub use eval_set::{build_eval_set, read_eval_set, write_eval_set, EvalSet, EvalSetStats, PairRecord};
pub use train::{even_epoch, uniform_epoch, EpochSample, FallbackCounts};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::ReidDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Match,
    NonMatch,
}

impl Label {
    pub fn as_f32(self) -> f32 {
        match self {
            Label::Match => 1.0,
            Label::NonMatch => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub obs_a: String,
    pub obs_b: String,
    pub label: Label,
    /// Class the pair was drawn for; negatives share its predicted class.
    pub class: String,
    /// The second observation is a false positive.
    pub is_fp_pair: bool,
}

/// Total-variation distance between the density-bucket marginals of
/// positives and negatives, bucketing each pair by `min(n_a, n_b)`.
pub fn density_tv(pairs: &[PairSample], ds: &ReidDataset) -> f64 {
    let mut pos: BTreeMap<u32, f64> = BTreeMap::new();
    let mut neg: BTreeMap<u32, f64> = BTreeMap::new();
    let (mut n_pos, mut n_neg) = (0.0, 0.0);
    for p in pairs {
        let (Some(a), Some(b)) = (ds.by_id(&p.obs_a), ds.by_id(&p.obs_b)) else {
            continue;
        };
        let bucket = a.bucket().min(b.bucket());
        match p.label {
            Label::Match => {
                *pos.entry(bucket).or_default() += 1.0;
                n_pos += 1.0;
            }
            Label::NonMatch => {
                *neg.entry(bucket).or_default() += 1.0;
                n_neg += 1.0;
            }
        }
    }
    if n_pos == 0.0 || n_neg == 0.0 {
        return 0.0;
    }
    let buckets: std::collections::BTreeSet<u32> = pos.keys().chain(neg.keys()).copied().collect();
    0.5 * buckets
        .iter()
        .map(|b| {
            (pos.get(b).copied().unwrap_or(0.0) / n_pos - neg.get(b).copied().unwrap_or(0.0) / n_neg).abs()
        })
        .sum::<f64>()
}

/// Per predicted class: positions grouped by density bucket.
#[derive(Debug, Default)]
struct ClassPools {
    tp: BTreeMap<u32, Vec<usize>>,
    fp: BTreeMap<u32, Vec<usize>>,
}

impl ClassPools {
    fn build(ds: &ReidDataset, min_points: usize) -> BTreeMap<String, ClassPools> {
        let mut pools: BTreeMap<String, ClassPools> = BTreeMap::new();
        for (pos, obs) in ds.observations().iter().enumerate() {
            if obs.n_points() < min_points {
                continue;
            }
            let entry = pools.entry(obs.predicted_class.clone()).or_default();
            let map = if obs.is_fp() { &mut entry.fp } else { &mut entry.tp };
            map.entry(obs.bucket()).or_default().push(pos);
        }
        pools
    }
}

/// Nearest non-empty bucket to `target` by index distance, ties toward lower.
fn nearest_bucket<F>(buckets: &BTreeMap<u32, Vec<usize>>, target: u32, mut nonempty: F) -> Option<u32>
where
    F: FnMut(&[usize]) -> bool,
{
    let mut candidates: Vec<u32> = buckets
        .iter()
        .filter(|(_, v)| nonempty(v))
        .map(|(b, _)| *b)
        .collect();
    candidates.sort_by_key(|&b| (b.abs_diff(target), b));
    candidates.first().copied()
}

#[cfg(test)]
mod tests;
