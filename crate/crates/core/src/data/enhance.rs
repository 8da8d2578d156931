use rand::seq::SliceRandom;
use rand::Rng;

use super::{AugmentConfig, Tracklet};
use crate::geom::{canonicalize, decanonicalize, giou_3d, point_in_box, Box3D, Point};

/// Object points of a pooled frame, in its box's canonical frame.
fn object_points(points: &[Point], b: &Box3D) -> Vec<Point> {
    let grown = b.inflated(0.1);
    let inside: Vec<Point> = points.iter().copied().filter(|p| point_in_box(p, &grown)).collect();
    canonicalize(&inside, b)
}

/// With probability `cfg.rho`, attaches a same-category tracklet from `pool`
/// as a moving negative: placed at a random offset in the annulus
/// `cfg.annulus` around the target and advanced by a constant relative
/// velocity. Only points are added; labels and target points are untouched.
/// Placements that overlap the target in any frame are redrawn up to 10
/// times, then the window is returned unchanged.
pub fn sequence_enhance(window: &Tracklet, pool: &[Tracklet], cfg: &AugmentConfig, rng: &mut impl Rng) -> Tracklet {
    enhance_traced(window, pool, cfg, rng).0
}

/// [`sequence_enhance`] that also reports the attached boxes.
pub(crate) fn enhance_traced(
    window: &Tracklet,
    pool: &[Tracklet],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> (Tracklet, Option<Vec<Box3D>>) {
    if cfg.rho <= 0.0 || rng.gen::<f64>() >= cfg.rho {
        return (window.clone(), None);
    }
    let n = window.len();
    let candidates: Vec<&Tracklet> = pool.iter().filter(|t| t.category == window.category && t.len() >= n).collect();
    let Some(src) = candidates.choose(rng) else {
        return (window.clone(), None);
    };
    let start = rng.gen_range(0..=src.len() - n);
    let src = &src.frames[start..start + n];
    use std::f64::consts::PI;
    for _ in 0..10 {
        let r = rng.gen_range(cfg.annulus.0..cfg.annulus.1);
        let a = rng.gen_range(-PI..PI);
        let speed = rng.gen_range(0.0..=cfg.max_rel_speed);
        let dir = rng.gen_range(-PI..PI);
        let dh = rng.gen_range(-PI..PI);
        let placed: Vec<Box3D> = window
            .frames
            .iter()
            .zip(src)
            .enumerate()
            .map(|(k, (f, s))| {
                let t = k as f64;
                let c = [
                    f.gt.center[0] + r * a.cos() + t * speed * dir.cos(),
                    f.gt.center[1] + r * a.sin() + t * speed * dir.sin(),
                    f.gt.center[2] - f.gt.size[2] / 2.0 + s.gt.size[2] / 2.0,
                ];
                Box3D {
                    center: c,
                    size: s.gt.size,
                    heading: crate::geom::normalize_angle(f.gt.heading + dh),
                }
            })
            .collect();
        if placed.iter().zip(&window.frames).any(|(p, f)| giou_3d(p, &f.gt).iou > 0.0) {
            continue;
        }
        let mut out = window.clone();
        for ((f, s), b) in out.frames.iter_mut().zip(src).zip(&placed) {
            f.points.extend(decanonicalize(&object_points(&s.points, &s.gt), b));
        }
        return (out, Some(placed));
    }
    (window.clone(), None)
}
