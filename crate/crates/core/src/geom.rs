//! Planar geometry shared by the simulator, planner and sensors.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Gap below which two boxes are treated as touching, and touching counts as contact.
pub const CONTACT_EPS: f64 = 1e-9;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2 { x: v[0], y: v[1] }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        Vec2::new(a.cos(), a.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotate(self, a: f64) -> Vec2 {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Planar pose; `yaw` is kept in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2D { x, y, yaw: wrap_angle(yaw) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// World point expressed in this pose's frame (x forward, y left).
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.yaw)
    }

    /// Local point expressed in the world frame.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        p.rotate(self.yaw) + self.position()
    }
}

/// Oriented bounding box. `half.x` runs along the heading, `half.y` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: Vec2,
    pub half: Vec2,
    pub yaw: f64,
}

impl Obb {
    pub fn new(center: Vec2, half: Vec2, yaw: f64) -> Self {
        Obb { center, half, yaw }
    }

    pub fn from_pose(pose: &Pose2D, half: Vec2) -> Self {
        Obb::new(pose.position(), half, pose.yaw)
    }

    pub fn axes(&self) -> [Vec2; 2] {
        let u = Vec2::from_angle(self.yaw);
        [u, u.perp()]
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let [u, v] = self.axes();
        let a = u * self.half.x;
        let b = v * self.half.y;
        let c = self.center;
        [c + a + b, c - a + b, c - a - b, c + a - b]
    }

    /// Radius of the projection of this box onto a unit axis.
    fn projected_radius(&self, axis: Vec2) -> f64 {
        let [u, v] = self.axes();
        self.half.x * u.dot(axis).abs() + self.half.y * v.dot(axis).abs()
    }

    /// Separating-axis test. Boxes closer than [`CONTACT_EPS`] count as overlapping.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let d = other.center - self.center;
        let [a0, a1] = self.axes();
        let [b0, b1] = other.axes();
        for axis in [a0, a1, b0, b1] {
            let gap = d.dot(axis).abs() - self.projected_radius(axis) - other.projected_radius(axis);
            if gap >= CONTACT_EPS {
                return false;
            }
        }
        true
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let l = (p - self.center).rotate(-self.yaw);
        l.x.abs() <= self.half.x && l.y.abs() <= self.half.y
    }

    /// Distance along a ray to the first boundary crossing, if the ray hits the box
    /// from outside. `dir` must be unit length.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let o = (origin - self.center).rotate(-self.yaw);
        let d = dir.rotate(-self.yaw);
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for (oc, dc, h) in [(o.x, d.x, self.half.x), (o.y, d.y, self.half.y)] {
            if dc.abs() < 1e-15 {
                if oc.abs() > h {
                    return None;
                }
            } else {
                let t1 = (-h - oc) / dc;
                let t2 = (h - oc) / dc;
                let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                t_near = t_near.max(lo);
                t_far = t_far.min(hi);
                if t_near > t_far {
                    return None;
                }
            }
        }
        if t_far < 0.0 {
            return None;
        }
        Some(t_near.max(0.0))
    }
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn polygon_centroid(poly: &[Vec2]) -> Vec2 {
    let mut area = 0.0;
    let mut c = Vec2::ZERO;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cr = a.cross(b);
        area += cr;
        c = c + (a + b) * cr;
    }
    if area.abs() < 1e-12 {
        let s = poly.iter().fold(Vec2::ZERO, |acc, p| acc + *p);
        return s * (1.0 / n.max(1) as f64);
    }
    c * (1.0 / (3.0 * area))
}

/// Closest-point query result against a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    pub segment: usize,
    pub t: f64,
    pub point: Vec2,
    pub distance: f64,
    /// Positive to the left of the travel direction.
    pub signed_offset: f64,
    pub heading: f64,
    /// Arc length from the polyline start to `point`.
    pub arc: f64,
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

pub fn project_on_polyline(pts: &[Vec2], p: Vec2) -> Option<PolylineProjection> {
    if pts.len() < 2 {
        return None;
    }
    let mut best: Option<PolylineProjection> = None;
    let mut arc0 = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len_sq = ab.norm_sq();
        let len = len_sq.sqrt();
        let t = if len_sq > 0.0 { ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
        let q = a + ab * t;
        let d = p.dist(q);
        if best.map_or(true, |b| d < b.distance) {
            let heading = if len > 0.0 { ab.angle() } else { 0.0 };
            let side = if len > 0.0 { ab.cross(p - a) / len } else { 0.0 };
            best = Some(PolylineProjection {
                segment: i,
                t,
                point: q,
                distance: d,
                signed_offset: if side >= 0.0 { d } else { -d },
                heading,
                arc: arc0 + len * t,
            });
        }
        arc0 += len;
    }
    best
}

/// Point and heading at arc length `s` along a polyline (clamped to its ends).
pub fn polyline_point_at(pts: &[Vec2], cumulative: &[f64], s: f64) -> (Vec2, f64) {
    debug_assert_eq!(pts.len(), cumulative.len());
    let n = pts.len();
    if n == 1 {
        return (pts[0], 0.0);
    }
    let s = s.clamp(0.0, cumulative[n - 1]);
    let i = match cumulative.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    let seg = cumulative[i + 1] - cumulative[i];
    let t = if seg > 0.0 { (s - cumulative[i]) / seg } else { 0.0 };
    (pts[i].lerp(pts[i + 1], t), (pts[i + 1] - pts[i]).angle())
}

pub fn cumulative_lengths(pts: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].dist(w[1]);
        out.push(acc);
    }
    out
}
