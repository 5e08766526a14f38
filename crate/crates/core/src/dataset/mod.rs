//! Observation datasets: record types, extraction from detection logs,
//! on-disk formats, and the synthetic scene generator.

mod extract;
mod io;
mod synth;

pub use extract::{extract_observations, match_frame, DetectionFate, ExtractConfig, ExtractStats};
pub use io::{
    read_dataset, read_jsonl, read_scene, write_dataset, write_jsonl, write_scene, FrameIndexEntry,
    ManifestEntry,
};
pub use synth::{generate_synthetic, is_deformable, SynthConfig, SyntheticScene, KNOWN_CLASSES};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bucket_index, Box3D, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
    pub predicted_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtTrackRecord {
    pub frame: u64,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub object_id: String,
    pub class: String,
}

/// One cropped, canonicalized point set for one object at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub observation_id: String,
    /// `None` marks a false positive.
    pub object_id: Option<String>,
    /// Ground-truth class of `object_id`; `None` for false positives.
    pub class: Option<String>,
    pub predicted_class: String,
    pub frame: u64,
    pub points: Vec<Point>,
    pub detector_score: f64,
}

impl Observation {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Density bucket; observations are never stored empty.
    pub fn bucket(&self) -> u32 {
        bucket_index(self.points.len().max(1)).unwrap_or(0)
    }

    pub fn is_fp(&self) -> bool {
        self.object_id.is_none()
    }
}

/// Observations grouped by object identity, plus false positives grouped by
/// predicted class. Object and class maps are ordered, so iteration order is
/// canonical.
#[derive(Debug, Clone, Default)]
pub struct ReidDataset {
    observations: Vec<Observation>,
    index: BTreeMap<String, Vec<usize>>,
    fp_index: BTreeMap<String, Vec<usize>>,
    class_of: BTreeMap<String, String>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for ReidDataset {
    fn eq(&self, other: &Self) -> bool {
        self.observations == other.observations
    }
}

impl ReidDataset {
    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        let mut ds = ReidDataset {
            observations,
            ..Default::default()
        };
        for (pos, obs) in ds.observations.iter().enumerate() {
            if ds.by_id.insert(obs.observation_id.clone(), pos).is_some() {
                return Err(Error::Format(format!(
                    "duplicate observation_id {}",
                    obs.observation_id
                )));
            }
            if obs.points.is_empty() {
                return Err(Error::Format(format!(
                    "observation {} has no points",
                    obs.observation_id
                )));
            }
            match (&obs.object_id, &obs.class) {
                (Some(oid), Some(class)) => {
                    if let Some(prev) = ds.class_of.get(oid) {
                        if prev != class {
                            return Err(Error::Format(format!(
                                "object {oid} has conflicting classes {prev} and {class}"
                            )));
                        }
                    } else {
                        ds.class_of.insert(oid.clone(), class.clone());
                    }
                    ds.index.entry(oid.clone()).or_default().push(pos);
                }
                (None, None) => ds
                    .fp_index
                    .entry(obs.predicted_class.clone())
                    .or_default()
                    .push(pos),
                _ => {
                    return Err(Error::Format(format!(
                        "observation {}: object_id and class must both be set or both be null",
                        obs.observation_id
                    )))
                }
            }
        }
        Ok(ds)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, pos: usize) -> &Observation {
        &self.observations[pos]
    }

    pub fn position(&self, observation_id: &str) -> Option<usize> {
        self.by_id.get(observation_id).copied()
    }

    pub fn by_id(&self, observation_id: &str) -> Option<&Observation> {
        self.position(observation_id).map(|p| &self.observations[p])
    }

    /// Object id → positions of its observations.
    pub fn index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.index
    }

    /// Predicted class → positions of false-positive observations.
    pub fn fp_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.fp_index
    }

    pub fn class_of(&self) -> &BTreeMap<String, String> {
        &self.class_of
    }

    pub fn n_objects(&self) -> usize {
        self.index.len()
    }

    pub fn observation_ids_of(&self, object_id: &str) -> Vec<&str> {
        self.index
            .get(object_id)
            .map(|ps| {
                ps.iter()
                    .map(|&p| self.observations[p].observation_id.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Per-class dataset statistics: objects, observations, and the number
    /// of distinct unordered positive and negative pairs.
    pub fn class_stats(&self) -> BTreeMap<String, ClassStats> {
        let mut out: BTreeMap<String, ClassStats> = BTreeMap::new();
        let mut sq_sums: BTreeMap<String, u128> = BTreeMap::new();
        for (oid, positions) in &self.index {
            let class = &self.class_of[oid];
            let m = positions.len() as u128;
            let s = out.entry(class.clone()).or_default();
            s.objects += 1;
            s.observations += m as u64;
            s.positive_pairs += m * (m - 1) / 2;
            *sq_sums.entry(class.clone()).or_default() += m * m;
        }
        for (class, fps) in &self.fp_index {
            out.entry(class.clone()).or_default().false_positives = fps.len() as u64;
        }
        for (class, s) in out.iter_mut() {
            let t = s.observations as u128;
            let sq = sq_sums.get(class).copied().unwrap_or(0);
            // cross-object pairs within the class, plus every TP against every FP
            s.negative_pairs = (t * t - sq) / 2 + t * s.false_positives as u128;
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    pub objects: u64,
    pub observations: u64,
    pub false_positives: u64,
    pub positive_pairs: u128,
    pub negative_pairs: u128,
}
