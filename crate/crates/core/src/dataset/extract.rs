use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DetectionRecord, GtTrackRecord, Observation, ReidDataset};
use crate::error::{Error, Result};
use crate::geometry::{crop_canonical, hungarian, iou_3d, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    /// Detections must score strictly above this.
    pub score_threshold: f64,
    /// Minimum IoU for a detection/GT pair to be matchable.
    pub iou_threshold: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.1,
            iou_threshold: 0.01,
        }
    }
}

/// What happened to one detection of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFate {
    LowScore,
    /// Assigned to the GT record at this index (within the frame's GT list).
    TruePositive(usize),
    /// Unassigned, but overlaps a GT box another detection claimed.
    Duplicate,
    FalsePositive,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractStats {
    pub frames: usize,
    pub low_score: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub duplicates: usize,
    pub empty: usize,
}

const FORBIDDEN: f64 = 1e6;

/// Matches the detections of a single frame against its GT boxes.
///
/// Pairs below the IoU gate cost more than any admissible matching, so the
/// assignment first maximizes the number of admissible pairs and then
/// minimizes `Σ (1 − IoU)`.
pub fn match_frame(
    detections: &[DetectionRecord],
    gt: &[GtTrackRecord],
    cfg: &ExtractConfig,
) -> Vec<DetectionFate> {
    let kept: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].score > cfg.score_threshold)
        .collect();
    let mut fates = vec![DetectionFate::LowScore; detections.len()];

    let iou: Vec<Vec<f64>> = kept
        .iter()
        .map(|&i| gt.iter().map(|g| iou_3d(&detections[i].bbox, &g.bbox)).collect())
        .collect();
    let cost: Vec<Vec<f64>> = iou
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| if v >= cfg.iou_threshold { 1.0 - v } else { FORBIDDEN })
                .collect()
        })
        .collect();

    let mut claimed = vec![false; gt.len()];
    let mut assigned = vec![None; kept.len()];
    if !gt.is_empty() {
        for (r, c) in hungarian(&cost).pairs {
            if iou[r][c] >= cfg.iou_threshold {
                assigned[r] = Some(c);
                claimed[c] = true;
            }
        }
    }

    for (r, &det) in kept.iter().enumerate() {
        fates[det] = match assigned[r] {
            Some(c) => DetectionFate::TruePositive(c),
            None if iou[r]
                .iter()
                .zip(&claimed)
                .any(|(&v, &cl)| cl && v >= cfg.iou_threshold) =>
            {
                DetectionFate::Duplicate
            }
            None => DetectionFate::FalsePositive,
        };
    }
    fates
}

/// Builds the observation dataset from detection and GT logs.
///
/// Points are cropped from the *detected* box and expressed in its canonical
/// frame. Observations with no points are dropped. Observation ids are
/// `"{frame}:{detection index within frame}"`.
pub fn extract_observations(
    detections: &[DetectionRecord],
    gt: &[GtTrackRecord],
    frame_points: &BTreeMap<u64, Vec<Point>>,
    cfg: &ExtractConfig,
) -> Result<(ReidDataset, ExtractStats)> {
    let mut dets_by_frame: BTreeMap<u64, Vec<&DetectionRecord>> = BTreeMap::new();
    for d in detections {
        if !frame_points.contains_key(&d.frame) {
            return Err(Error::Input(format!(
                "detection references unknown frame {}",
                d.frame
            )));
        }
        dets_by_frame.entry(d.frame).or_default().push(d);
    }
    let mut gt_by_frame: BTreeMap<u64, Vec<GtTrackRecord>> = BTreeMap::new();
    for g in gt {
        let frame_gt = gt_by_frame.entry(g.frame).or_default();
        if frame_gt.iter().any(|o| o.object_id == g.object_id) {
            return Err(Error::Input(format!(
                "object {} appears twice in frame {}",
                g.object_id, g.frame
            )));
        }
        frame_gt.push(g.clone());
    }

    let frames: Vec<(u64, Vec<&DetectionRecord>)> = dets_by_frame.into_iter().collect();
    let per_frame: Vec<(Vec<Observation>, ExtractStats)> = frames
        .par_iter()
        .map(|(frame, dets)| {
            let owned: Vec<DetectionRecord> = dets.iter().map(|d| (*d).clone()).collect();
            let frame_gt = gt_by_frame.get(frame).map(Vec::as_slice).unwrap_or(&[]);
            let fates = match_frame(&owned, frame_gt, cfg);
            let points = &frame_points[frame];
            let mut stats = ExtractStats {
                frames: 1,
                ..Default::default()
            };
            let mut out = Vec::new();
            for (i, (det, fate)) in owned.iter().zip(&fates).enumerate() {
                let (object_id, class) = match *fate {
                    DetectionFate::LowScore => {
                        stats.low_score += 1;
                        continue;
                    }
                    DetectionFate::Duplicate => {
                        stats.duplicates += 1;
                        continue;
                    }
                    DetectionFate::TruePositive(g) => (
                        Some(frame_gt[g].object_id.clone()),
                        Some(frame_gt[g].class.clone()),
                    ),
                    DetectionFate::FalsePositive => (None, None),
                };
                let cropped = crop_canonical(points, &det.bbox);
                if cropped.is_empty() {
                    stats.empty += 1;
                    continue;
                }
                if object_id.is_some() {
                    stats.true_positives += 1;
                } else {
                    stats.false_positives += 1;
                }
                out.push(Observation {
                    observation_id: format!("{frame}:{i}"),
                    object_id,
                    class,
                    predicted_class: det.predicted_class.clone(),
                    frame: *frame,
                    points: cropped,
                    detector_score: det.score,
                });
            }
            (out, stats)
        })
        .collect();

    let mut stats = ExtractStats::default();
    let mut observations = Vec::new();
    for (obs, s) in per_frame {
        observations.extend(obs);
        stats.frames += s.frames;
        stats.low_score += s.low_score;
        stats.true_positives += s.true_positives;
        stats.false_positives += s.false_positives;
        stats.duplicates += s.duplicates;
        stats.empty += s.empty;
    }
    Ok((ReidDataset::from_observations(observations)?, stats))
}
