use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nearest_bucket, ClassPools, Label, PairSample};
use crate::dataset::ReidDataset;
use crate::rng::keyed_rng;

/// How often each fallback fired during one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackCounts {
    /// Positive branch on an object with one observation; paired with itself.
    pub single_observation: usize,
    /// Requested bucket was empty; the nearest non-empty one was used.
    pub nearest_bucket: usize,
    /// No false positives of the class; the TP branch was taken.
    pub no_fp_class: usize,
    /// No TP of another object in the class; the FP branch was taken.
    pub no_other_object: usize,
    /// No negative candidate at all; a positive was emitted instead.
    pub no_negative: usize,
}

impl FallbackCounts {
    pub fn merge(mut self, o: Self) -> Self {
        self.single_observation += o.single_observation;
        self.nearest_bucket += o.nearest_bucket;
        self.no_fp_class += o.no_fp_class;
        self.no_other_object += o.no_other_object;
        self.no_negative += o.no_negative;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochSample {
    pub pairs: Vec<PairSample>,
    pub fallbacks: FallbackCounts,
}

#[derive(Clone, Copy)]
enum Mode {
    Even,
    Uniform,
}

/// One pair per object, negatives matched to the object's own density
/// bucket distribution.
pub fn even_epoch(ds: &ReidDataset, seed: u64, epoch: u64) -> EpochSample {
    run_epoch(ds, seed, epoch, Mode::Even)
}

/// One pair per object, negatives drawn without regard to density.
pub fn uniform_epoch(ds: &ReidDataset, seed: u64, epoch: u64) -> EpochSample {
    run_epoch(ds, seed, epoch, Mode::Uniform)
}

fn run_epoch(ds: &ReidDataset, seed: u64, epoch: u64, mode: Mode) -> EpochSample {
    let pools = ClassPools::build(ds, 1);
    let tag: &[u8] = match mode {
        Mode::Even => b"even",
        Mode::Uniform => b"uniform",
    };
    let objects: Vec<(&String, &Vec<usize>)> = ds.index().iter().collect();
    let drawn: Vec<(PairSample, FallbackCounts)> = objects
        .par_iter()
        .map(|(object_id, members)| {
            let mut rng = keyed_rng(seed, &[tag, &epoch.to_le_bytes(), object_id.as_bytes()]);
            draw_for_object(ds, &pools, object_id, members, mode, &mut rng)
        })
        .collect();
    let mut fallbacks = FallbackCounts::default();
    let pairs = drawn
        .into_iter()
        .map(|(p, f)| {
            fallbacks = fallbacks.merge(f);
            p
        })
        .collect();
    EpochSample { pairs, fallbacks }
}

fn draw_for_object(
    ds: &ReidDataset,
    pools: &BTreeMap<String, ClassPools>,
    object_id: &str,
    members: &[usize],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> (PairSample, FallbackCounts) {
    let mut fb = FallbackCounts::default();
    let class = ds.class_of()[object_id].clone();
    let o1 = members[rng.gen_range(0..members.len())];
    let id = |p: usize| ds.get(p).observation_id.clone();
    let positive = |o2: usize| PairSample {
        obs_a: id(o1),
        obs_b: id(o2),
        label: Label::Match,
        class: class.clone(),
        is_fp_pair: false,
    };

    if rng.gen_bool(0.5) {
        if members.len() == 1 {
            fb.single_observation += 1;
            return (positive(o1), fb);
        }
        let k = rng.gen_range(0..members.len() - 1);
        let o2 = members.iter().copied().filter(|&p| p != o1).nth(k).expect("k < len - 1");
        return (positive(o2), fb);
    }

    let target = match mode {
        Mode::Even => Some(ds.get(members[rng.gen_range(0..members.len())]).bucket()),
        Mode::Uniform => None,
    };
    let empty = ClassPools::default();
    let pool = pools.get(&class).unwrap_or(&empty);
    let other = |p: &usize| ds.get(*p).object_id.as_deref() != Some(object_id);
    let has_fp = !pool.fp.is_empty();
    let has_tp = pool.tp.values().flatten().any(other);

    let use_fp = match (has_fp, has_tp) {
        (false, false) => {
            fb.no_negative += 1;
            let o2 = if members.len() > 1 {
                *members.iter().filter(|&&p| p != o1).collect::<Vec<_>>().choose(rng).copied().unwrap()
            } else {
                fb.single_observation += 1;
                o1
            };
            return (positive(o2), fb);
        }
        (false, true) => {
            fb.no_fp_class += 1;
            false
        }
        (true, false) => {
            fb.no_other_object += 1;
            true
        }
        (true, true) => rng.gen_bool(0.5),
    };

    let candidates: Vec<usize> = if use_fp {
        pick_from(&pool.fp, target, |_| true, &mut fb)
    } else {
        pick_from(&pool.tp, target, other, &mut fb)
    };
    let o2 = *candidates.choose(rng).expect("pool checked nonempty");
    (
        PairSample {
            obs_a: id(o1),
            obs_b: id(o2),
            label: Label::NonMatch,
            class: class.clone(),
            is_fp_pair: use_fp,
        },
        fb,
    )
}

/// Candidates in the target bucket (or its nearest non-empty neighbour), or
/// across all buckets when no target is given.
fn pick_from<F>(
    buckets: &BTreeMap<u32, Vec<usize>>,
    target: Option<u32>,
    keep: F,
    fb: &mut FallbackCounts,
) -> Vec<usize>
where
    F: Fn(&usize) -> bool,
{
    match target {
        None => buckets.values().flatten().copied().filter(|p| keep(p)).collect(),
        Some(b) => {
            let chosen = nearest_bucket(buckets, b, |v| v.iter().any(&keep)).expect("pool checked nonempty");
            if chosen != b {
                fb.nearest_bucket += 1;
            }
            buckets[&chosen].iter().copied().filter(|p| keep(p)).collect()
        }
    }
}
