//! Planar geometry shared by the scenario generator, planner and simulator:
//! poses, rigid frame changes, oriented boxes, and arc-length parametrized
//! polylines.

use serde::{Deserialize, Serialize};

/// Position plus heading in the plane. Headings are radians in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose { x, y, heading }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(std::f64::consts::TAU);
    if r > std::f64::consts::PI {
        r - std::f64::consts::TAU
    } else {
        r
    }
}

/// Rigid motion mapping world coordinates into the frame anchored at `origin`
/// (origin maps to `(0, 0)` with heading `0`).
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    cos: f64,
    sin: f64,
    ox: f64,
    oy: f64,
}

impl RigidTransform {
    pub fn into_frame_of(origin: Pose) -> Self {
        RigidTransform {
            cos: origin.heading.cos(),
            sin: origin.heading.sin(),
            ox: origin.x,
            oy: origin.y,
        }
    }

    pub fn apply_point(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.ox;
        let dy = y - self.oy;
        (self.cos * dx + self.sin * dy, -self.sin * dx + self.cos * dy)
    }

    /// Rotates a free vector (velocity, acceleration) without translating it.
    pub fn apply_vector(&self, vx: f64, vy: f64) -> (f64, f64) {
        (self.cos * vx + self.sin * vy, -self.sin * vx + self.cos * vy)
    }

    pub fn apply_heading(&self, heading: f64) -> f64 {
        wrap_angle(heading - self.sin.atan2(self.cos))
    }

    pub fn apply_pose(&self, p: Pose) -> Pose {
        let (x, y) = self.apply_point(p.x, p.y);
        Pose::new(x, y, self.apply_heading(p.heading))
    }
}

/// Oriented rectangle footprint, described by its center pose and half-extents.
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: Pose,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Obb {
    pub fn new(center: Pose, length: f64, width: f64) -> Self {
        Obb {
            center,
            half_len: length / 2.0,
            half_wid: width / 2.0,
        }
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.center.heading.cos(), self.center.heading.sin());
        let (l, w) = (self.half_len, self.half_wid);
        let mut out = [(0.0, 0.0); 4];
        for (i, (dx, dy)) in [(l, w), (l, -w), (-l, -w), (-l, w)].iter().enumerate() {
            out[i] = (
                self.center.x + c * dx - s * dy,
                self.center.y + s * dx + c * dy,
            );
        }
        out
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (c, s) = (self.center.heading.cos(), self.center.heading.sin());
        [(c, s), (-s, c)]
    }
}

/// Separating-axis overlap test for two oriented rectangles. Touching edges
/// count as overlap.
pub fn obb_overlap(a: &Obb, b: &Obb) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    for (ax, ay) in a.axes().into_iter().chain(b.axes()) {
        let project = |pts: &[(f64, f64); 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(x, y) in pts {
                let d = x * ax + y * ay;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            (lo, hi)
        };
        let (alo, ahi) = project(&ca);
        let (blo, bhi) = project(&cb);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// Polyline with precomputed cumulative arc length, supporting projection and
/// lateral offsets. Used for routes and lane centerlines.
#[derive(Debug, Clone)]
pub struct ArcPath {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
}

impl ArcPath {
    /// Builds a path from at least two points; consecutive duplicates are
    /// dropped so every segment has positive length.
    pub fn new(points: &[(f64, f64)]) -> Option<Self> {
        let mut pts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        for &p in points {
            if pts.last().map_or(true, |&q| dist(p, q) > 1e-9) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return None;
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            acc += dist(w[0], w[1]);
            cum.push(acc);
        }
        Some(ArcPath { pts, cum })
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point at arc position `s`, clamped to the path extent.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        let (i, t) = self.locate(s);
        let (x0, y0) = self.pts[i];
        let (x1, y1) = self.pts[i + 1];
        (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t)
    }

    /// Tangent heading at arc position `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let (i, _) = self.locate(s);
        let (x0, y0) = self.pts[i];
        let (x1, y1) = self.pts[i + 1];
        (y1 - y0).atan2(x1 - x0)
    }

    /// Point displaced `d` to the left of the path at arc position `s`.
    pub fn offset_point(&self, s: f64, d: f64) -> (f64, f64) {
        let (x, y) = self.point_at(s);
        let h = self.heading_at(s);
        (x - h.sin() * d, y + h.cos() * d)
    }

    /// Projects a point onto the path, returning `(s, lateral)` where
    /// `lateral` is positive to the left of the travel direction.
    pub fn project(&self, x: f64, y: f64) -> (f64, f64) {
        let mut best = (0.0, 0.0, f64::INFINITY);
        for i in 0..self.pts.len() - 1 {
            let (x0, y0) = self.pts[i];
            let (x1, y1) = self.pts[i + 1];
            let (ex, ey) = (x1 - x0, y1 - y0);
            let len2 = ex * ex + ey * ey;
            let t = (((x - x0) * ex + (y - y0) * ey) / len2).clamp(0.0, 1.0);
            let (px, py) = (x0 + ex * t, y0 + ey * t);
            let d2 = (x - px) * (x - px) + (y - py) * (y - py);
            if d2 < best.2 {
                let seg_len = len2.sqrt();
                let s = self.cum[i] + t * seg_len;
                // Sign from the cross product of segment direction and offset.
                let cross = ex * (y - py) - ey * (x - px);
                let lateral = d2.sqrt() * if cross >= 0.0 { 1.0 } else { -1.0 };
                best = (s, lateral, d2);
            }
        }
        (best.0, best.1)
    }

    fn locate(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, self.length());
        // cum is sorted; find the segment containing s.
        let mut i = match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).expect("arc lengths are finite"))
        {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        if i >= self.pts.len() - 1 {
            i = self.pts.len() - 2;
        }
        let seg = self.cum[i + 1] - self.cum[i];
        (i, ((s - self.cum[i]) / seg).clamp(0.0, 1.0))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}
