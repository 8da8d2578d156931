use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tracklet;
use crate::error::{Error, Result};
use crate::geom::{normalize_angle, Box3D, RigidTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Per-axis bound on the reference box translation shift (m).
    pub box_shift_translation: f64,
    /// Bound on the reference box heading shift (rad).
    pub box_shift_heading: f64,
    /// Per-axis bound on the horizontal frame translation (m).
    pub frame_translation: f64,
    /// Bound on the frame rotation about the GT center (rad).
    pub frame_yaw: f64,
    /// Sequence enhancement probability.
    pub rho: f64,
    /// Distractor placement annulus `(d_min, d_max)` in meters.
    pub annulus: (f64, f64),
    /// Upper bound on the distractor's relative speed (m/frame).
    pub max_rel_speed: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            box_shift_translation: 0.3,
            box_shift_heading: 0.1,
            frame_translation: 0.1,
            frame_yaw: 0.05,
            rho: 0.3,
            annulus: (1.0, 4.0),
            max_rel_speed: 0.4,
        }
    }
}

impl AugmentConfig {
    /// No augmentation and no enhancement.
    pub fn none() -> Self {
        Self {
            box_shift_translation: 0.0,
            box_shift_heading: 0.0,
            frame_translation: 0.0,
            frame_yaw: 0.0,
            rho: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            self.box_shift_translation,
            self.box_shift_heading,
            self.frame_translation,
            self.frame_yaw,
            self.max_rel_speed,
        ];
        if ranges.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("augmentation ranges must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if !(self.annulus.0 >= 0.0 && self.annulus.0 < self.annulus.1) {
            return Err(Error::Config(format!("annulus needs 0 <= d_min < d_max, got {:?}", self.annulus)));
        }
        Ok(())
    }
}

/// A training window after augmentation: frames with their (transformed)
/// GT, plus the shifted per-frame reference boxes used as canonical frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    pub tracklet: Tracklet,
    pub references: Vec<Box3D>,
}

fn sym(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.gen_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Frame-wise motion augmentation followed by box shift. Each frame gets an
/// independent rigid transform (yaw about its GT center, then a horizontal
/// translation) applied to all its points and its GT box. The references are
/// the transformed GT boxes with a small random offset in center and heading.
pub fn augment(window: &Tracklet, cfg: &AugmentConfig, rng: &mut impl Rng) -> TrainWindow {
    let mut tracklet = window.clone();
    let mut references = Vec::with_capacity(window.len());
    for f in &mut tracklet.frames {
        let yaw = sym(rng, cfg.frame_yaw);
        let shift = [sym(rng, cfg.frame_translation), sym(rng, cfg.frame_translation), 0.0];
        let c = f.gt.center;
        let rot = RigidTransform::new(yaw, [0.0; 3]);
        let rc = rot.apply(&c);
        let tf = RigidTransform::new(yaw, [c[0] - rc[0] + shift[0], c[1] - rc[1] + shift[1], c[2] - rc[2]]);
        f.points = tf.apply_all(&f.points);
        f.gt = f.gt.transformed(&tf);

        let d = cfg.box_shift_translation;
        let mut r = f.gt;
        r.center = [c[0] + shift[0] + sym(rng, d), c[1] + shift[1] + sym(rng, d), c[2] + sym(rng, d)];
        r.heading = normalize_angle(f.gt.heading + sym(rng, cfg.box_shift_heading));
        references.push(r);
    }
    TrainWindow { tracklet, references }
}
