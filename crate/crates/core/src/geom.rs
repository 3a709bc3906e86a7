//! Planar geometry for footprints and the image method.

use std::ops::{Add, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    #[inline]
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Vec2::new(p[0], p[1])
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

/// Signed area (positive for counter-clockwise vertex order).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        / 2.0
}

/// Strict point-in-polygon test: points on the boundary (within `1e-9` m)
/// are reported as outside.
pub fn strictly_inside(poly: &[Vec2], p: Vec2) -> bool {
    const TOL: f64 = 1e-9;
    let n = poly.len();
    for i in 0..n {
        if point_segment_distance(p, poly[i], poly[(i + 1) % n]) <= TOL {
            return false;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

/// Intersection parameters `(t, u)` of segments `p + t (q - p)` and
/// `a + u (b - a)`, or `None` if parallel.
pub fn segment_params(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> Option<(f64, f64)> {
    let r = q - p;
    let s = b - a;
    let denom = r.cross(s);
    if denom.abs() < 1e-15 * r.norm().max(1.0) * s.norm().max(1.0) {
        return None;
    }
    let ap = a - p;
    Some((ap.cross(s) / denom, ap.cross(r) / denom))
}

/// Mirror image of `p` across the infinite line through `a` and `b`.
pub fn mirror(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let d = b - a;
    let t = (p - a).dot(d) / d.dot(d);
    let foot = a + d * t;
    foot * 2.0 - p
}
