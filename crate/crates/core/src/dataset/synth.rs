//! Deterministic synthetic driving scenes.
//!
//! Every object carries a fixed shape signature (box dimensions plus a few
//! smooth surface bumps). Rigid classes keep it across frames; deformable
//! classes re-perturb it per observation. Each observation surface-samples
//! a Poisson number of points whose mean varies per object and per frame,
//! so identity is recoverable from shape, more reliably with more points.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{DetectionRecord, GtTrackRecord};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, Point};

pub const KNOWN_CLASSES: [&str; 5] = ["bicycle", "bus", "car", "pedestrian", "truck"];

pub fn is_deformable(class: &str) -> bool {
    matches!(class, "pedestrian" | "bicycle")
}

/// Mean and standard deviation of (length, width, height), plus speed in m/frame.
fn class_prior(class: &str) -> Option<([f64; 3], [f64; 3], f64)> {
    Some(match class {
        "car" => ([4.5, 1.9, 1.6], [0.45, 0.15, 0.15], 1.0),
        "truck" => ([7.0, 2.5, 3.0], [1.2, 0.3, 0.4], 0.8),
        "bus" => ([11.0, 2.9, 3.2], [1.5, 0.15, 0.2], 0.6),
        "pedestrian" => ([0.7, 0.7, 1.75], [0.1, 0.1, 0.12], 0.3),
        "bicycle" => ([1.8, 0.6, 1.3], [0.15, 0.08, 0.1], 0.5),
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of objects per class.
    pub objects: BTreeMap<String, usize>,
    pub frames_per_object: usize,
    /// Mean points per observation.
    pub lambda: f64,
    /// Per-object density multiplier is log-uniform in `[1/spread, spread]`.
    pub lambda_spread: f64,
    /// Log-normal per-frame density jitter around the object's mean.
    pub lambda_jitter: f64,
    pub sigma_center: f64,
    pub sigma_yaw: f64,
    /// Expected false-positive clutter detections per frame.
    pub fp_rate: f64,
    /// Probability that a GT object also produces a duplicate detection.
    pub duplicate_rate: f64,
    /// Probability that a GT object also produces a sub-threshold detection.
    pub low_score_rate: f64,
    /// Relative per-observation shape jitter for deformable classes.
    pub articulation: f64,
    /// Multiplier on the per-class spread of object dimensions.
    pub shape_spread: f64,
    pub objects_per_scene: usize,
    pub bumps_per_object: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            objects: BTreeMap::from([("car".to_string(), 10), ("pedestrian".to_string(), 5)]),
            frames_per_object: 8,
            lambda: 32.0,
            lambda_spread: 1.0,
            lambda_jitter: 0.35,
            sigma_center: 0.1,
            sigma_yaw: 0.05,
            fp_rate: 0.5,
            duplicate_rate: 0.05,
            low_score_rate: 0.05,
            articulation: 0.15,
            shape_spread: 1.0,
            objects_per_scene: 8,
            bumps_per_object: 5,
        }
    }
}

impl SynthConfig {
    /// The benchmark set: 550 objects over five classes, densities spanning
    /// roughly 4 to 128 points per observation.
    pub fn reference() -> Self {
        Self {
            objects: BTreeMap::from([
                ("bicycle".to_string(), 100),
                ("bus".to_string(), 50),
                ("car".to_string(), 150),
                ("pedestrian".to_string(), 150),
                ("truck".to_string(), 100),
            ]),
            frames_per_object: 16,
            lambda: 22.6,
            lambda_spread: 5.66,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda > 0.0) {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if !(self.lambda_spread >= 1.0) {
            return bad(format!("lambda_spread must be >= 1, got {}", self.lambda_spread));
        }
        for (name, v) in [
            ("lambda_jitter", self.lambda_jitter),
            ("sigma_center", self.sigma_center),
            ("sigma_yaw", self.sigma_yaw),
            ("fp_rate", self.fp_rate),
            ("articulation", self.articulation),
            ("shape_spread", self.shape_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("duplicate_rate", self.duplicate_rate),
            ("low_score_rate", self.low_score_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.frames_per_object == 0 || self.objects_per_scene == 0 {
            return bad("frames_per_object and objects_per_scene must be >= 1".into());
        }
        if let Some(c) = self.objects.keys().find(|c| class_prior(c).is_none()) {
            return bad(format!("unknown class {c:?}; known: {KNOWN_CLASSES:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticScene {
    pub detections: Vec<DetectionRecord>,
    pub gt: Vec<GtTrackRecord>,
    pub frame_points: BTreeMap<u64, Vec<Point>>,
}

#[derive(Debug, Clone)]
struct Bump {
    face: usize,
    u: f64,
    v: f64,
    radius: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
struct Shape {
    dims: [f64; 3],
    bumps: Vec<Bump>,
}

const BODY: f64 = 0.85;
const MAX_BUMP: f64 = (1.0 - BODY) / 2.0;
// +x, −x, +y, −y, +z; the ground-facing side is never seen
const FACES: [(usize, f64); 5] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];

fn tangents(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl Shape {
    fn sample(rng: &mut ChaCha8Rng, mean: [f64; 3], std: [f64; 3], n_bumps: usize) -> Self {
        let mut dims = [0.0; 3];
        for k in 0..3 {
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
            dims[k] = (mean[k] + std[k] * z.clamp(-2.5, 2.5)).max(0.2 * mean[k]);
        }
        let bumps = (0..n_bumps)
            .map(|_| Bump {
                face: rng.gen_range(0..FACES.len()),
                u: rng.gen_range(-0.4..0.4),
                v: rng.gen_range(-0.4..0.4),
                radius: rng.gen_range(0.1..0.3),
                amp: rng.gen_range(0.3..1.0),
            })
            .collect();
        Self { dims, bumps }
    }

    fn articulate(&self, rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let jitter = Normal::new(0.0, scale.max(1e-12)).unwrap();
        let mut out = self.clone();
        for d in out.dims.iter_mut() {
            *d *= (1.0 + jitter.sample(rng)).clamp(0.7, 1.3);
        }
        for b in out.bumps.iter_mut() {
            b.u = (b.u + jitter.sample(rng)).clamp(-0.5, 0.5);
            b.v = (b.v + jitter.sample(rng)).clamp(-0.5, 0.5);
            b.amp = (b.amp * (1.0 + jitter.sample(rng))).clamp(0.0, 1.0);
        }
        out
    }

    /// One surface point in the object frame.
    fn surface_point(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let body = self.dims.map(|d| d * BODY);
        let areas: Vec<f64> = FACES
            .iter()
            .map(|&(axis, _)| {
                let (t1, t2) = tangents(axis);
                body[t1] * body[t2]
            })
            .collect();
        let mut pick = rng.gen_range(0.0..areas.iter().sum::<f64>());
        let mut face = FACES.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if pick < *a {
                face = i;
                break;
            }
            pick -= a;
        }
        let (axis, sign) = FACES[face];
        let (t1, t2) = tangents(axis);
        let u: f64 = rng.gen_range(-0.5..0.5);
        let v: f64 = rng.gen_range(-0.5..0.5);
        let disp: f64 = self
            .bumps
            .iter()
            .filter(|b| b.face == face)
            .map(|b| {
                let r2 = (u - b.u).powi(2) + (v - b.v).powi(2);
                b.amp * (-r2 / (2.0 * b.radius * b.radius)).exp()
            })
            .sum::<f64>()
            .min(1.0);
        let mut p = [0.0; 3];
        p[t1] = u * body[t1];
        p[t2] = v * body[t2];
        p[axis] = sign * (body[axis] / 2.0 + disp * MAX_BUMP * self.dims[axis]);
        p
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    Poisson::new(mean.max(1e-9)).unwrap().sample(rng) as usize
}

/// Generates detections, GT tracks, and raw frame points. Byte-identical
/// output for identical `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let sensor_noise = 0.01;
    let log_spread = cfg.lambda_spread.ln();
    let classes: Vec<&String> = cfg.objects.keys().collect();

    struct Obj {
        id: String,
        class: String,
        shape: Shape,
        density: f64,
        heading: f64,
        speed: f64,
    }
    let mut objects = Vec::new();
    for (class, &count) in &cfg.objects {
        let (mean, std, speed) = class_prior(class).expect("validated");
        let std = std.map(|v| v * cfg.shape_spread);
        for i in 0..count {
            let density = cfg.lambda * (rng.gen_range(-1.0..=1.0) * log_spread).exp();
            objects.push(Obj {
                id: format!("{class}-{i:05}"),
                class: class.clone(),
                shape: Shape::sample(&mut rng, mean, std, cfg.bumps_per_object),
                density,
                heading: rng.gen_range(-PI..PI),
                speed,
            });
        }
    }

    let mut scene = SyntheticScene::default();
    let frames = cfg.frames_per_object as u64;
    for (s, group) in objects.chunks(cfg.objects_per_scene).enumerate() {
        for t in 0..frames {
            let frame = s as u64 * frames + t;
            let mut points: Vec<Point> = Vec::new();
            for (k, obj) in group.iter().enumerate() {
                let row_y = 40.0 * k as f64;
                // bounded back-and-forth motion keeps lanes from touching the clutter strip
                let travel = 8.0 * obj.speed * (0.4 * t as f64).sin();
                let center = [
                    travel * obj.heading.cos(),
                    row_y + travel * obj.heading.sin(),
                    obj.shape.dims[2] / 2.0,
                ];
                let gt_box = Box3D::new(center, obj.shape.dims, obj.heading)?;
                scene.gt.push(GtTrackRecord {
                    frame,
                    bbox: gt_box,
                    object_id: obj.id.clone(),
                    class: obj.class.clone(),
                });

                let shape = if is_deformable(&obj.class) {
                    obj.shape.articulate(&mut rng, cfg.articulation)
                } else {
                    obj.shape.clone()
                };
                let lam = obj.density * (cfg.lambda_jitter * unit.sample(&mut rng)).exp();
                for _ in 0..poisson(&mut rng, lam) {
                    let mut p = shape.surface_point(&mut rng);
                    for v in p.iter_mut() {
                        *v += sensor_noise * unit.sample(&mut rng);
                    }
                    points.push(gt_box.to_world(p).map(|v| v as f32));
                }

                let noisy = |rng: &mut ChaCha8Rng, scale: f64| -> Result<Box3D> {
                    let c = [
                        center[0] + scale * cfg.sigma_center * unit.sample(rng),
                        center[1] + scale * cfg.sigma_center * unit.sample(rng),
                        center[2] + 0.5 * scale * cfg.sigma_center * unit.sample(rng),
                    ];
                    let size = obj.shape.dims.map(|d| d * (1.0 + 0.03 * scale * unit.sample(rng)).max(0.5));
                    Box3D::new(c, size, obj.heading + scale * cfg.sigma_yaw * unit.sample(rng))
                };
                scene.detections.push(DetectionRecord {
                    frame,
                    bbox: noisy(&mut rng, 1.0)?,
                    score: rng.gen_range(0.3..1.0),
                    predicted_class: obj.class.clone(),
                });
                if rng.gen_bool(cfg.duplicate_rate) {
                    scene.detections.push(DetectionRecord {
                        frame,
                        bbox: noisy(&mut rng, 2.0)?,
                        score: rng.gen_range(0.15..0.5),
                        predicted_class: obj.class.clone(),
                    });
                }
                if rng.gen_bool(cfg.low_score_rate) {
                    scene.detections.push(DetectionRecord {
                        frame,
                        bbox: noisy(&mut rng, 1.0)?,
                        score: rng.gen_range(0.0..0.1),
                        predicted_class: obj.class.clone(),
                    });
                }
            }

            // clutter between the object lanes
            let n_fp = if cfg.fp_rate > 0.0 { poisson(&mut rng, cfg.fp_rate) } else { 0 };
            for _ in 0..n_fp {
                let class = classes[rng.gen_range(0..classes.len())];
                let (mean, std, _) = class_prior(class).expect("validated");
                let dims: [f64; 3] = [0, 1, 2].map(|k| (mean[k] + std[k] * unit.sample(&mut rng)).max(0.3 * mean[k]));
                let lane = rng.gen_range(0..group.len()) as f64;
                let center = [
                    rng.gen_range(-10.0..10.0),
                    40.0 * lane + 20.0 + rng.gen_range(-3.0..3.0),
                    dims[2] / 2.0,
                ];
                let bx = Box3D::new(center, dims, rng.gen_range(-PI..PI))?;
                let lam = cfg.lambda * (rng.gen_range(-1.0..=1.0) * log_spread).exp();
                for _ in 0..poisson(&mut rng, lam) {
                    let local = [0, 1, 2].map(|k| (unit.sample(&mut rng) * dims[k] / 6.0).clamp(-dims[k] / 2.0, dims[k] / 2.0));
                    points.push(bx.to_world(local).map(|v| v as f32));
                }
                scene.detections.push(DetectionRecord {
                    frame,
                    bbox: bx,
                    score: rng.gen_range(0.11..0.6),
                    predicted_class: class.clone(),
                });
            }
            scene.frame_points.insert(frame, points);
        }
    }
    Ok(scene)
}
