//! Matching metrics, density-threshold curves, power-law fits, and timing.

mod bench;
mod powerlaw;

pub use bench::{bench, BenchReport};
pub use powerlaw::{fit_power_law, fit_power_law_in, FitSpace, PowerLawFit, DEFAULT_EPS_GRID};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ReidDataset;
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::model::ReidModel;
use crate::sampling::{EvalSet, Label};
use crate::train::{pair_tensors, sigmoid};

/// One scored evaluation pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub label: Label,
    pub logit: f64,
    pub class: String,
    pub is_fp_pair: bool,
    pub n_a: usize,
    pub n_b: usize,
}

impl PairOutcome {
    pub fn predicted(&self, threshold: f64) -> Label {
        if sigmoid(self.logit) >= threshold {
            Label::Match
        } else {
            Label::NonMatch
        }
    }

    pub fn correct(&self, threshold: f64) -> bool {
        self.predicted(threshold) == self.label
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// F1 with MATCH as the positive class; 1 when there is nothing to find.
    pub fn f1_pos(&self) -> f64 {
        f1(self.tp, self.fp, self.fn_)
    }

    /// F1 with NON_MATCH as the positive class.
    pub fn f1_neg(&self) -> f64 {
        f1(self.tn, self.fn_, self.fp)
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1_pos: f64,
    pub f1_neg: f64,
    pub per_class: BTreeMap<String, f64>,
    pub per_class_pairs: BTreeMap<String, usize>,
    /// Accuracy over pairs whose second member is a false positive; `None`
    /// when there are no such pairs.
    pub fp_accuracy: Option<f64>,
    pub fp_pairs: usize,
    pub n_pairs: usize,
    pub threshold: f64,
    pub confusion: Confusion,
}

/// Metrics over already-scored pairs.
pub fn report(outcomes: &[PairOutcome], threshold: f64) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let mut c = Confusion::default();
    let mut per_class: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let (mut fp_hit, mut fp_n) = (0, 0);
    for o in outcomes {
        let ok = o.correct(threshold);
        match (o.label, o.predicted(threshold)) {
            (Label::Match, Label::Match) => c.tp += 1,
            (Label::NonMatch, Label::Match) => c.fp += 1,
            (Label::Match, Label::NonMatch) => c.fn_ += 1,
            (Label::NonMatch, Label::NonMatch) => c.tn += 1,
        }
        let e = per_class.entry(o.class.clone()).or_default();
        e.0 += ok as usize;
        e.1 += 1;
        if o.is_fp_pair {
            fp_hit += ok as usize;
            fp_n += 1;
        }
    }
    Ok(EvalReport {
        accuracy: c.accuracy(),
        f1_pos: c.f1_pos(),
        f1_neg: c.f1_neg(),
        per_class: per_class.iter().map(|(k, (h, n))| (k.clone(), *h as f64 / *n as f64)).collect(),
        per_class_pairs: per_class.iter().map(|(k, (_, n))| (k.clone(), *n)).collect(),
        fp_accuracy: (fp_n > 0).then(|| fp_hit as f64 / fp_n as f64),
        fp_pairs: fp_n,
        n_pairs: outcomes.len(),
        threshold,
        confusion: c,
    })
}

/// Scores every pair of `set`; point resampling is keyed by `seed` and the
/// pair index, so results do not depend on thread count.
pub fn score_eval_set(model: &ReidModel, set: &EvalSet, ds: &ReidDataset, seed: u64) -> Result<Vec<PairOutcome>> {
    let n = model.n_points();
    set.pairs
        .par_iter()
        .zip(&set.densities)
        .enumerate()
        .map(|(i, (pair, &(n_a, n_b)))| {
            let idx = (i as u64).to_le_bytes();
            let (a, b) = pair_tensors(ds, pair, n, seed, &[b"eval", &idx])?;
            Ok(PairOutcome {
                label: pair.label,
                logit: model.score(&a, &b)? as f64,
                class: pair.class.clone(),
                is_fp_pair: pair.is_fp_pair,
                n_a,
                n_b,
            })
        })
        .collect()
}

pub fn evaluate(model: &ReidModel, set: &EvalSet, ds: &ReidDataset, threshold: f64, seed: u64) -> Result<EvalReport> {
    if set.pairs.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    report(&score_eval_set(model, set, ds, seed)?, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// Both observations have at least `x` points.
    Both,
    /// At least one observation has `x` points.
    One,
}

impl CurveMode {
    pub fn keeps(self, n_a: usize, n_b: usize, x: usize) -> bool {
        match self {
            CurveMode::Both => n_a.min(n_b) >= x,
            CurveMode::One => n_a.max(n_b) >= x,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CurveMode::Both => "both",
            CurveMode::One => "one",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: usize,
    pub mode: CurveMode,
    pub accuracy: f64,
    pub n_pairs: usize,
}

/// Accuracy of the pairs passing each density threshold; empty subsets are
/// left out. `classes` restricts the pairs to those classes.
pub fn density_curve(
    outcomes: &[PairOutcome],
    mode: CurveMode,
    thresholds: &[usize],
    threshold: f64,
    classes: Option<&[&str]>,
) -> Vec<CurvePoint> {
    thresholds
        .iter()
        .filter_map(|&x| {
            let (hit, n) = outcomes
                .iter()
                .filter(|o| classes.map_or(true, |cs| cs.contains(&o.class.as_str())))
                .filter(|o| mode.keeps(o.n_a, o.n_b, x))
                .fold((0usize, 0usize), |(h, n), o| (h + o.correct(threshold) as usize, n + 1));
            (n > 0).then(|| CurvePoint {
                x,
                mode,
                accuracy: hit as f64 / n as f64,
                n_pairs: n,
            })
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("x,mode,accuracy,n_pairs\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.x, p.mode.as_str(), p.accuracy, p.n_pairs);
    }
    s
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    atomic_write(path, curve_csv(points).as_bytes())
}
