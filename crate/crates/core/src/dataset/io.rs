//! On-disk layouts.
//!
//! A dataset directory holds `manifest.jsonl` (one line per observation, all
//! fields except the points, plus a byte range) and `points.bin` (contiguous
//! little-endian `f32` xyz triples in manifest order).
//!
//! A scene directory holds `detections.jsonl`, `gt.jsonl`, and the raw frame
//! points as `frames.bin` indexed by `frames.jsonl`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{DetectionRecord, GtTrackRecord, Observation, ReidDataset, SyntheticScene};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read};
use crate::geometry::{bucket_index, Point};

const POINT_BYTES: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub observation_id: String,
    pub object_id: Option<String>,
    pub class: Option<String>,
    pub predicted_class: String,
    pub frame: u64,
    pub n_points: usize,
    pub bucket: u32,
    pub detector_score: f64,
    /// Byte offset into `points.bin`.
    pub offset: u64,
    /// Byte length in `points.bin`.
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndexEntry {
    pub frame: u64,
    pub offset: u64,
    pub length: u64,
}

fn encode_points(points: &[Point], out: &mut Vec<u8>) {
    for p in points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn decode_points(bytes: &[u8]) -> Vec<Point> {
    bytes
        .chunks_exact(POINT_BYTES as usize)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]);
            [f(0), f(4), f(8)]
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Parses one JSON value per non-empty line; errors carry the 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_dataset(ds: &ReidDataset, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut manifest = Vec::with_capacity(ds.len());
    for obs in ds.observations() {
        let offset = blob.len() as u64;
        encode_points(&obs.points, &mut blob);
        manifest.push(ManifestEntry {
            observation_id: obs.observation_id.clone(),
            object_id: obs.object_id.clone(),
            class: obs.class.clone(),
            predicted_class: obs.predicted_class.clone(),
            frame: obs.frame,
            n_points: obs.n_points(),
            bucket: obs.bucket(),
            detector_score: obs.detector_score,
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    atomic_write(&dir.join("points.bin"), &blob)?;
    write_jsonl(&dir.join("manifest.jsonl"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<ReidDataset> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let manifest: Vec<ManifestEntry> = read_jsonl(&dir.join("manifest.jsonl"))?;
    let blob = read(&dir.join("points.bin"))?;
    let mut seen = HashSet::new();
    let mut observations = Vec::with_capacity(manifest.len());
    for e in manifest {
        let id = &e.observation_id;
        if !seen.insert(id.clone()) {
            return Err(Error::Format(format!("duplicate observation_id {id}")));
        }
        let end = e
            .offset
            .checked_add(e.length)
            .ok_or_else(|| Error::Format(format!("observation {id}: byte range overflows")))?;
        if end > blob.len() as u64 {
            return Err(Error::Format(format!(
                "observation {id}: bytes {}..{end} exceed points.bin length {}",
                e.offset,
                blob.len()
            )));
        }
        if e.length != e.n_points as u64 * POINT_BYTES {
            return Err(Error::Format(format!(
                "observation {id}: length {} does not hold {} points",
                e.length, e.n_points
            )));
        }
        if e.n_points == 0 || bucket_index(e.n_points)? != e.bucket {
            return Err(Error::Format(format!(
                "observation {id}: bucket {} inconsistent with {} points",
                e.bucket, e.n_points
            )));
        }
        observations.push(Observation {
            points: decode_points(&blob[e.offset as usize..end as usize]),
            observation_id: e.observation_id,
            object_id: e.object_id,
            class: e.class,
            predicted_class: e.predicted_class,
            frame: e.frame,
            detector_score: e.detector_score,
        });
    }
    ReidDataset::from_observations(observations)
}

pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    write_jsonl(&dir.join("detections.jsonl"), &scene.detections)?;
    write_jsonl(&dir.join("gt.jsonl"), &scene.gt)?;
    let mut blob = Vec::new();
    let mut index = Vec::with_capacity(scene.frame_points.len());
    for (frame, pts) in &scene.frame_points {
        let offset = blob.len() as u64;
        encode_points(pts, &mut blob);
        index.push(FrameIndexEntry {
            frame: *frame,
            offset,
            length: blob.len() as u64 - offset,
        });
    }
    atomic_write(&dir.join("frames.bin"), &blob)?;
    write_jsonl(&dir.join("frames.jsonl"), &index)
}

pub fn read_scene(dir: &Path) -> Result<SyntheticScene> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "scene directory {} does not exist",
            dir.display()
        )));
    }
    let detections: Vec<DetectionRecord> = read_jsonl(&dir.join("detections.jsonl"))?;
    let gt: Vec<GtTrackRecord> = read_jsonl(&dir.join("gt.jsonl"))?;
    let index: Vec<FrameIndexEntry> = read_jsonl(&dir.join("frames.jsonl"))?;
    let blob = read(&dir.join("frames.bin"))?;
    let mut frame_points = BTreeMap::new();
    for e in index {
        let end = e.offset.saturating_add(e.length);
        if end > blob.len() as u64 || e.length % POINT_BYTES != 0 {
            return Err(Error::Format(format!(
                "frame {}: invalid byte range {}..{end}",
                e.frame, e.offset
            )));
        }
        let pts = decode_points(&blob[e.offset as usize..end as usize]);
        if frame_points.insert(e.frame, pts).is_some() {
            return Err(Error::Format(format!("frame {} indexed twice", e.frame)));
        }
    }
    Ok(SyntheticScene {
        detections,
        gt,
        frame_points,
    })
}
