//! Boxes, rigid transforms and point-set geometry.
//!
//! Conventions: `z` is up, a [`Box3D`] heading rotates the box frame about
//! `z`, and `size = (w, l, h)` are the full extents along the box-frame
//! `x`, `y` and `z` axes.

mod iou;
mod sampling;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use iou::{giou_3d, iou_terms, Dual, Enclosing, OverlapTerms, Real, RealBox};
pub use sampling::{ball_query, farthest_point_sample};

pub type Point = [f64; 3];

/// Wraps an angle into (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

pub fn dist(a: &Point, b: &Point) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Point,
    pub size: [f64; 3],
    pub heading: f64,
}

impl Box3D {
    pub fn new(center: Point, size: [f64; 3], heading: f64) -> Result<Self> {
        if size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("Box3D", format!("sizes must be positive, got {size:?}")));
        }
        if center.iter().any(|c| !c.is_finite()) || !heading.is_finite() {
            return Err(Error::invalid("Box3D", "non-finite center or heading"));
        }
        Ok(Self {
            center,
            size,
            heading: normalize_angle(heading),
        })
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// Pose mapping box-frame coordinates to the parent frame.
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.heading, self.center)
    }

    /// The 8 corners in the parent frame, ordered by box-frame signs
    /// `(±w/2, ±l/2, ±h/2)` lexicographically with `−` before `+`.
    pub fn corners(&self) -> [Point; 8] {
        let pose = self.pose();
        let [w, l, h] = self.size.map(|s| s / 2.0);
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 4 == 0 { -w } else { w };
            let sy = if i & 2 == 0 { -l } else { l };
            let sz = if i & 1 == 0 { -h } else { h };
            *c = pose.apply(&[sx, sy, sz]);
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> Box3D {
        Box3D {
            center: t.apply(&self.center),
            size: self.size,
            heading: normalize_angle(self.heading + t.yaw),
        }
    }

    /// Inclusive containment test against the oriented box.
    pub fn contains(&self, p: &Point) -> bool {
        point_in_box(p, self)
    }

    /// Box grown by `margin` on every side.
    pub fn inflated(&self, margin: f64) -> Box3D {
        Box3D {
            size: self.size.map(|s| s + 2.0 * margin),
            ..*self
        }
    }
}

/// Rotation about `z` followed by a translation: `p ↦ R(yaw)·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub yaw: f64,
    pub translation: Point,
}

impl RigidTransform {
    pub fn new(yaw: f64, translation: Point) -> Self {
        Self { yaw, translation }
    }

    pub fn identity() -> Self {
        Self::new(0.0, [0.0; 3])
    }

    pub fn rotate(&self, p: &Point) -> Point {
        let (s, c) = self.yaw.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
    }

    pub fn apply(&self, p: &Point) -> Point {
        let r = self.rotate(p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn apply_all(&self, pts: &[Point]) -> Vec<Point> {
        pts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn inverse(&self) -> Self {
        let inv_rot = RigidTransform::new(-self.yaw, [0.0; 3]);
        let t = inv_rot.rotate(&self.translation);
        Self::new(-self.yaw, [-t[0], -t[1], -t[2]])
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self::new(self.yaw + other.yaw, self.apply(&other.translation))
    }
}

/// Non-empty set of finite points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    coords: Vec<Point>,
}

impl PointSet {
    pub fn new(coords: Vec<Point>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("PointSet", "empty point set"));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("PointSet", "non-finite coordinate"));
        }
        Ok(Self { coords })
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<Point> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Expresses points in the frame where `reference` sits at the origin with
/// zero heading.
pub fn canonicalize(points: &[Point], reference: &Box3D) -> Vec<Point> {
    reference.pose().inverse().apply_all(points)
}

/// Inverse of [`canonicalize`].
pub fn decanonicalize(points: &[Point], reference: &Box3D) -> Vec<Point> {
    reference.pose().apply_all(points)
}

pub fn point_in_box(p: &Point, b: &Box3D) -> bool {
    let local = b.pose().inverse().apply(p);
    local.iter().zip(&b.size).all(|(v, s)| v.abs() <= s / 2.0)
}

/// Per point: distance to the box center, then to the 8 corners in
/// [`Box3D::corners`] order.
pub fn box_aware_distances(points: &[Point], b: &Box3D) -> Vec<[f64; 9]> {
    let corners = b.corners();
    points
        .iter()
        .map(|p| {
            let mut row = [0.0; 9];
            row[0] = dist(p, &b.center);
            for (r, c) in row[1..].iter_mut().zip(&corners) {
                *r = dist(p, c);
            }
            row
        })
        .collect()
}
