//! Oriented 3D IoU / GIoU.
//!
//! The bird's-eye-view overlap of two rotated rectangles is found by
//! Sutherland–Hodgman clipping (both are convex), multiplied by the
//! vertical interval overlap. The GIoU enclosing volume is a box whose
//! BEV axes are aligned with a frame chosen by [`Enclosing`].
//!
//! Everything is generic over [`Real`], so the same code evaluated on
//! [`Dual`] numbers yields exact derivatives of IoU/GIoU with respect to the
//! box parameters (almost everywhere; the clipping topology is fixed by the
//! primal values).

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Box3D;

pub trait Real: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self> {
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn max_by_val(self, o: Self) -> Self {
        if o.val() > self.val() {
            o
        } else {
            self
        }
    }

    fn min_by_val(self, o: Self) -> Self {
        if o.val() < self.val() {
            o
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn val(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Forward-mode dual number carrying `N` partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    /// The `i`-th independent variable.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; N];
        d[i] = 1.0;
        Self { v, d }
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: std::array::from_fn(|i| self.d[i] + o.d[i]),
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: std::array::from_fn(|i| self.d[i] - o.d[i]),
        }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: std::array::from_fn(|i| self.d[i] * o.v + self.v * o.d[i]),
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.v;
        Self {
            v: self.v * inv,
            d: std::array::from_fn(|i| (self.d[i] * o.v - self.v * o.d[i]) * inv * inv),
        }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            v: -self.v,
            d: self.d.map(|x| -x),
        }
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Self { v, d: [0.0; N] }
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let c = self.v.cos();
        Self {
            v: self.v.sin(),
            d: self.d.map(|x| x * c),
        }
    }
    fn cos(self) -> Self {
        let s = -self.v.sin();
        Self {
            v: self.v.cos(),
            d: self.d.map(|x| x * s),
        }
    }
}

/// Box with generic scalar parameters.
#[derive(Debug, Clone, Copy)]
pub struct RealBox<T> {
    pub center: [T; 3],
    pub size: [T; 3],
    pub heading: T,
}

impl From<&Box3D> for RealBox<f64> {
    fn from(b: &Box3D) -> Self {
        RealBox {
            center: b.center,
            size: b.size,
            heading: b.heading,
        }
    }
}

impl<T: Real> RealBox<T> {
    pub fn constant(b: &Box3D) -> Self {
        RealBox {
            center: b.center.map(T::cst),
            size: b.size.map(T::cst),
            heading: T::cst(b.heading),
        }
    }
}

/// Frame whose axes the GIoU enclosing box is aligned with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Enclosing {
    /// Centered between the two boxes, rotated to the bisector of their
    /// headings. Rotation invariant, symmetric, and tight for identical boxes.
    #[default]
    PairAligned,
    /// World `x`/`y` axes.
    WorldAligned,
}

#[derive(Debug, Clone, Copy)]
pub struct OverlapTerms<T> {
    pub iou: T,
    pub giou: T,
    pub intersection: T,
    pub union: T,
    pub enclosing: T,
}

type P2<T> = [T; 2];

fn cross<T: Real>(o: P2<T>, a: P2<T>, b: P2<T>) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn shoelace<T: Real>(poly: &[P2<T>]) -> T {
    let mut acc = T::cst(0.0);
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc = acc + (p[0] * q[1] - q[0] * p[1]);
    }
    acc / T::cst(2.0)
}

/// Counter-clockwise BEV rectangle.
fn bev_corners<T: Real>(b: &RealBox<T>) -> [P2<T>; 4] {
    let half = T::cst(0.5);
    let (w, l) = (b.size[0] * half, b.size[1] * half);
    let (s, c) = (b.heading.sin(), b.heading.cos());
    [(-w, -l), (w, -l), (w, l), (-w, l)].map(|(x, y)| [c * x - s * y + b.center[0], s * x + c * y + b.center[1]])
}

/// Clips `subject` by the convex counter-clockwise polygon `clip`.
fn clip_convex<T: Real>(subject: &[P2<T>], clip: &[P2<T>]) -> Vec<P2<T>> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().expect("non-empty");
        let mut prev_side = cross(a, b, prev);
        for &cur in &input {
            let cur_side = cross(a, b, cur);
            let cur_in = cur_side.val() >= 0.0;
            let prev_in = prev_side.val() >= 0.0;
            if cur_in != prev_in {
                let t = prev_side / (prev_side - cur_side);
                out.push([prev[0] + (cur[0] - prev[0]) * t, prev[1] + (cur[1] - prev[1]) * t]);
            }
            if cur_in {
                out.push(cur);
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    out
}

fn to_frame<T: Real>(b: &RealBox<T>, origin: P2<T>, yaw: T) -> RealBox<T> {
    let (s, c) = (yaw.sin(), yaw.cos());
    let dx = b.center[0] - origin[0];
    let dy = b.center[1] - origin[1];
    RealBox {
        center: [c * dx + s * dy, -s * dx + c * dy, b.center[2]],
        size: b.size,
        heading: b.heading - yaw,
    }
}

pub fn iou_terms<T: Real>(a: &RealBox<T>, b: &RealBox<T>, enclosing: Enclosing) -> OverlapTerms<T> {
    let zero = T::cst(0.0);
    let half = T::cst(0.5);
    let (a, b) = match enclosing {
        Enclosing::WorldAligned => (*a, *b),
        Enclosing::PairAligned => {
            let origin = [(a.center[0] + b.center[0]) * half, (a.center[1] + b.center[1]) * half];
            let d = b.heading - a.heading;
            let wraps = ((d.val() + PI) / (2.0 * PI)).floor();
            let yaw = a.heading + (d - T::cst(wraps * 2.0 * PI)) * half;
            (to_frame(a, origin, yaw), to_frame(b, origin, yaw))
        }
    };

    let pa = bev_corners(&a);
    let pb = bev_corners(&b);
    let area_a = shoelace(&pa);
    let area_b = shoelace(&pb);
    let clipped = clip_convex(&pa, &pb);
    let area_i = if clipped.len() >= 3 {
        shoelace(&clipped).max_by_val(zero)
    } else {
        zero
    };

    let (bot_a, top_a) = (a.center[2] - a.size[2] * half, a.center[2] + a.size[2] * half);
    let (bot_b, top_b) = (b.center[2] - b.size[2] * half, b.center[2] + b.size[2] * half);
    let overlap_z = (top_a.min_by_val(top_b) - bot_a.max_by_val(bot_b)).max_by_val(zero);

    let intersection = area_i * overlap_z;
    let vol_a = area_a * (top_a - bot_a);
    let vol_b = area_b * (top_b - bot_b);
    let union = vol_a + vol_b - intersection;
    let iou = intersection / union;

    let mut lo = pa[0];
    let mut hi = pa[0];
    for p in pa.iter().chain(&pb) {
        for k in 0..2 {
            lo[k] = lo[k].min_by_val(p[k]);
            hi[k] = hi[k].max_by_val(p[k]);
        }
    }
    let z_extent = top_a.max_by_val(top_b) - bot_a.min_by_val(bot_b);
    let enclosing = (hi[0] - lo[0]) * (hi[1] - lo[1]) * z_extent;
    let giou = iou - (enclosing - union) / enclosing;
    OverlapTerms {
        iou,
        giou,
        intersection,
        union,
        enclosing,
    }
}

/// IoU and GIoU of two boxes with the default [`Enclosing::PairAligned`] frame.
pub fn giou_3d(a: &Box3D, b: &Box3D) -> OverlapTerms<f64> {
    iou_terms(&RealBox::from(a), &RealBox::from(b), Enclosing::default())
}
