//! Oriented boxes and the per-frame geometry used to turn detections into
//! object-centric observations.

mod hungarian;
mod iou;

pub use hungarian::{hungarian, Assignment};
pub use iou::{bev_corners, iou_3d};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f32; 3];

/// Yaw-only oriented 3D box. `size` is (length, width, height), length along
/// the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

#[derive(Deserialize)]
struct RawBox {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

impl TryFrom<RawBox> for Box3D {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        Box3D::new(raw.center, raw.size, raw.yaw)
    }
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self> {
        if !size.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::Domain(format!("box size must be positive, got {size:?}")));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(Error::Domain("box center and yaw must be finite".into()));
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Vertical extent `[z_min, z_max]`.
    pub fn z_range(&self) -> (f64, f64) {
        let h = self.size[2] / 2.0;
        (self.center[2] - h, self.center[2] + h)
    }

    /// Eight corners in world coordinates.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let [l, w, h] = self.size.map(|s| s / 2.0);
        let mut out = [[0.0; 3]; 8];
        let mut i = 0;
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    out[i] = self.to_world([sx * l, sy * w, sz * h]);
                    i += 1;
                }
            }
        }
        out
    }

    /// Box frame → world frame.
    pub fn to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * p[0] - s * p[1] + self.center[0],
            s * p[0] + c * p[1] + self.center[1],
            p[2] + self.center[2],
        ]
    }

    /// World frame → box frame: `R_z(−yaw)(p − center)`.
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    /// Inclusive containment test in the box frame.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let q = self.to_local(p);
        q.iter()
            .zip(self.size)
            .all(|(v, s)| v.abs() <= s / 2.0)
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps −π to π already; guard against rounding landing on −π
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Expresses points in the box's canonical frame (centered, heading along +x).
pub fn canonicalize(points: &[Point], bx: &Box3D) -> Vec<Point> {
    points
        .iter()
        .map(|p| {
            let q = bx.to_local(p.map(f64::from));
            q.map(|v| v as f32)
        })
        .collect()
}

/// Inverse of [`canonicalize`].
pub fn decanonicalize(points: &[Point], bx: &Box3D) -> Vec<Point> {
    points
        .iter()
        .map(|p| bx.to_world(p.map(f64::from)).map(|v| v as f32))
        .collect()
}

/// Points inside the oriented box, boundary inclusive, in input order.
pub fn crop(points: &[Point], bx: &Box3D) -> Vec<Point> {
    points
        .iter()
        .copied()
        .filter(|p| bx.contains(p.map(f64::from)))
        .collect()
}

/// Crops and canonicalizes in one pass.
pub fn crop_canonical(points: &[Point], bx: &Box3D) -> Vec<Point> {
    let half = bx.size.map(|s| s / 2.0);
    points
        .iter()
        .filter_map(|p| {
            let q = bx.to_local(p.map(f64::from));
            q.iter()
                .zip(half)
                .all(|(v, h)| v.abs() <= h)
                .then(|| q.map(|v| v as f32))
        })
        .collect()
}

/// Power-two density bucket: `floor(log2(n_points))`.
pub fn bucket_index(n_points: usize) -> Result<u32> {
    if n_points == 0 {
        return Err(Error::Domain("bucket_index of zero points".into()));
    }
    Ok(usize::BITS - 1 - n_points.leading_zeros())
}
