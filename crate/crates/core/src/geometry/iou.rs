use super::Box3D;

type P2 = [f64; 2];

/// Bird's-eye-view rectangle corners, counter-clockwise.
pub fn bev_corners(b: &Box3D) -> [P2; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (b.size[0] / 2.0, b.size[1] / 2.0);
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
        [
            c * x - s * y + b.center[0],
            s * x + c * y + b.center[1],
        ]
    })
}

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    (acc / 2.0).abs()
}

/// Sutherland–Hodgman clip of `subject` against the convex CCW `clip` polygon.
fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (ea, eb) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(ea, eb, cur) >= 0.0;
            let prev_in = cross(ea, eb, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, ea, eb));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, ea, eb));
            }
        }
    }
    output
}

fn intersect(p: P2, q: P2, a: P2, b: P2) -> P2 {
    let d1 = cross(a, b, p);
    let d2 = cross(a, b, q);
    let t = d1 / (d1 - d2);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn box_key(b: &Box3D) -> [u64; 7] {
    [
        b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.yaw,
    ]
    .map(f64::to_bits)
}

/// Oriented 3D IoU: BEV rotated-rectangle intersection area times vertical
/// overlap, over the union volume.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    // fixed operand order makes the result bitwise symmetric
    let (a, b) = if box_key(a) <= box_key(b) { (a, b) } else { (b, a) };

    let (az0, az1) = a.z_range();
    let (bz0, bz1) = b.z_range();
    let dz = az1.min(bz1) - az0.max(bz0);
    if dz <= 0.0 {
        return 0.0;
    }
    // cheap reject on circumscribed circles
    let ra = a.size[0].hypot(a.size[1]) / 2.0;
    let rb = b.size[0].hypot(b.size[1]) / 2.0;
    let dist = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
    if dist >= ra + rb {
        return 0.0;
    }

    let area = polygon_area(&clip_convex(&bev_corners(a), &bev_corners(b)));
    let inter = area * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}
