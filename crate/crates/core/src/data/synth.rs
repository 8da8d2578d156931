//! Synthetic LiDAR-like tracklets.
//!
//! A sensor sits at the origin. Objects are boxes resting on a ground plane;
//! each frame samples points on the faces turned towards the sensor, adds
//! Gaussian surface noise, and scatters uniform clutter over the scene.
//! Optional distractors (similar boxes moving alongside the target) and
//! occlusion events (most target points dropped for a few frames) make the
//! test split harder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geom::{giou_3d, Box3D, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub category: String,
    pub size: [f64; 3],
    /// Relative size jitter of distractors.
    pub size_jitter: f64,
}

impl Default for ShapeSpec {
    fn default() -> Self {
        Self {
            category: "cyclist".into(),
            size: [1.8, 0.7, 1.6],
            size_jitter: 0.2,
        }
    }
}

/// Planar motion along the box-frame `x` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionModel {
    pub start: Point,
    pub heading: f64,
    /// m/frame.
    pub speed: f64,
    /// m/frame².
    pub acceleration: f64,
    /// rad/frame.
    pub yaw_rate: f64,
    /// Std-dev of per-frame center noise, meters.
    pub jitter: f64,
}

impl MotionModel {
    pub fn validate(&self) -> Result<()> {
        let v = [self.heading, self.speed, self.acceleration, self.yaw_rate, self.jitter];
        if self.start.iter().chain(&v).any(|x| !x.is_finite()) || self.jitter < 0.0 {
            return Err(Error::invalid("MotionModel", "parameters must be finite, jitter non-negative"));
        }
        Ok(())
    }

    /// Boxes for `frames` steps.
    pub fn integrate(&self, size: [f64; 3], frames: usize, rng: &mut impl Rng) -> Result<Vec<Box3D>> {
        self.validate()?;
        let noise = Normal::new(0.0, self.jitter.max(f64::MIN_POSITIVE)).expect("valid std-dev");
        let mut c = self.start;
        let mut heading = self.heading;
        let mut out = Vec::with_capacity(frames);
        for k in 0..frames {
            let mut center = c;
            if self.jitter > 0.0 {
                center[0] += noise.sample(rng);
                center[1] += noise.sample(rng);
            }
            out.push(Box3D::new(center, size, heading)?);
            let v = self.speed + self.acceleration * k as f64;
            c[0] += v * heading.cos();
            c[1] += v * heading.sin();
            heading += self.yaw_rate;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub frames: usize,
    pub shape: ShapeSpec,
    /// Ground height relative to the sensor.
    pub ground_z: f64,
    /// Initial distance of the target from the sensor.
    pub start_range: (f64, f64),
    pub speed: (f64, f64),
    pub max_acceleration: f64,
    pub max_yaw_rate: f64,
    pub jitter: f64,
    /// Target points per frame before occlusion.
    pub object_points: (usize, usize),
    pub surface_noise: f64,
    /// Clutter points per square meter of scene area.
    pub clutter_density: f64,
    pub scene_margin: f64,
    /// Inclusive range of distractor counts.
    pub distractors: (usize, usize),
    /// Center offset range between distractor and target at frame 0.
    pub distractor_gap: (f64, f64),
    pub distractor_rel_speed: f64,
    /// Per-frame chance of starting an occlusion event.
    pub occlusion_prob: f64,
    pub occlusion_len: (usize, usize),
    /// Fraction of target points kept while occluded.
    pub occlusion_keep: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            shape: ShapeSpec::default(),
            ground_z: -1.7,
            start_range: (6.0, 16.0),
            speed: (0.0, 1.0),
            max_acceleration: 0.02,
            max_yaw_rate: 0.04,
            jitter: 0.0,
            object_points: (60, 150),
            surface_noise: 0.02,
            clutter_density: 0.15,
            scene_margin: 8.0,
            distractors: (0, 0),
            distractor_gap: (1.8, 4.0),
            distractor_rel_speed: 0.15,
            occlusion_prob: 0.1,
            occlusion_len: (1, 4),
            occlusion_keep: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frames >= 2
            && self.start_range.0 <= self.start_range.1
            && self.speed.0 <= self.speed.1
            && self.object_points.0 >= 1
            && self.object_points.0 <= self.object_points.1
            && self.distractors.0 <= self.distractors.1
            && self.distractor_gap.0 < self.distractor_gap.1
            && self.occlusion_len.0 >= 1
            && self.occlusion_len.0 <= self.occlusion_len.1
            && (0.0..=1.0).contains(&self.occlusion_prob)
            && (0.0..=1.0).contains(&self.occlusion_keep)
            && self.surface_noise >= 0.0
            && self.clutter_density >= 0.0;
        if !ok {
            return Err(Error::Config("scene: inconsistent ranges".into()));
        }
        Ok(())
    }
}

/// Points on the faces of `b` that face a sensor at the origin.
fn surface_points(b: &Box3D, count: usize, noise: f64, rng: &mut impl Rng) -> Vec<Point> {
    let pose = b.pose();
    let half = b.size.map(|s| s / 2.0);
    let sensor_local = pose.inverse().apply(&[0.0; 3]);
    // (axis, sign) of the five non-bottom faces.
    let faces = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)];
    let mut weights = Vec::new();
    for &(axis, sign) in &faces {
        let facing = sign * sensor_local[axis] - half[axis];
        if facing > 0.0 {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = b.size[u] * b.size[v];
            let d = crate::geom::dist(&sensor_local, &[0.0; 3]).max(1e-9);
            weights.push(((axis, sign), area * facing / d));
        }
    }
    let total: f64 = weights.iter().map(|w| w.1).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std-dev");
    let mut pts = Vec::with_capacity(count);
    for _ in 0..count {
        let mut r = rng.gen::<f64>() * total;
        let mut face = weights[0].0;
        for &(f, w) in &weights {
            face = f;
            if r < w {
                break;
            }
            r -= w;
        }
        let (axis, sign) = face;
        let mut local = [0.0; 3];
        for (k, l) in local.iter_mut().enumerate() {
            *l = if k == axis {
                sign * half[k]
            } else {
                rng.gen_range(-half[k]..=half[k])
            };
            if noise > 0.0 {
                *l += normal.sample(rng);
            }
        }
        pts.push(pose.apply(&local));
    }
    pts
}

fn occlusion_schedule(scene: &SceneConfig, rng: &mut impl Rng) -> Vec<bool> {
    let mut occluded = vec![false; scene.frames];
    let mut k = 1;
    while k < scene.frames {
        if rng.gen::<f64>() < scene.occlusion_prob {
            let len = rng.gen_range(scene.occlusion_len.0..=scene.occlusion_len.1);
            for o in occluded.iter_mut().skip(k).take(len) {
                *o = true;
            }
            k += len;
        } else {
            k += 1;
        }
    }
    occluded
}

fn clutter(boxes: &[Box3D], scene: &SceneConfig, rng: &mut impl Rng) -> Vec<Point> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for b in boxes {
        for k in 0..2 {
            lo[k] = lo[k].min(b.center[k] - scene.scene_margin);
            hi[k] = hi[k].max(b.center[k] + scene.scene_margin);
        }
    }
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let n = (area * scene.clutter_density).round() as usize;
    let top = scene.ground_z + 2.5;
    (0..n)
        .map(|_| {
            [
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                rng.gen_range(scene.ground_z..top),
            ]
        })
        .collect()
}

/// A target tracklet for the given motion; `distractors` are extra box
/// trajectories that contribute points only.
#[allow(clippy::too_many_arguments)]
fn render(id: u64, boxes: &[Box3D], distractors: &[Vec<Box3D>], scene: &SceneConfig, rng: &mut impl Rng) -> Result<Tracklet> {
    let occluded = occlusion_schedule(scene, rng);
    let mut frames = Vec::with_capacity(boxes.len());
    for (k, b) in boxes.iter().enumerate() {
        let mut count = rng.gen_range(scene.object_points.0..=scene.object_points.1);
        if occluded[k] {
            count = (count as f64 * scene.occlusion_keep).round() as usize;
        }
        let mut pts = surface_points(b, count, scene.surface_noise, rng);
        for d in distractors {
            let c = rng.gen_range(scene.object_points.0..=scene.object_points.1);
            pts.extend(surface_points(&d[k], c, scene.surface_noise, rng));
        }
        pts.extend(clutter(std::slice::from_ref(b), scene, rng));
        pts.shuffle(rng);
        frames.push(Frame {
            t: k as i64,
            points: pts,
            gt: *b,
        });
    }
    Tracklet::new(id, scene.shape.category.clone(), frames)
}

/// Target-only tracklet (clutter and occlusion per `scene`, no distractors).
pub fn generate_tracklet(motion: &MotionModel, shape: &ShapeSpec, scene: &SceneConfig, frames: usize, seed: u64) -> Result<Tracklet> {
    let scene = SceneConfig {
        frames,
        shape: shape.clone(),
        ..scene.clone()
    };
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = motion.integrate(shape.size, frames, &mut rng)?;
    render(seed, &boxes, &[], &scene, &mut rng)
}

fn random_motion(scene: &SceneConfig, rng: &mut impl Rng) -> MotionModel {
    use std::f64::consts::PI;
    let r = rng.gen_range(scene.start_range.0..=scene.start_range.1);
    let a = rng.gen_range(-PI..PI);
    MotionModel {
        start: [r * a.cos(), r * a.sin(), scene.ground_z + scene.shape.size[2] / 2.0],
        heading: rng.gen_range(-PI..PI),
        speed: rng.gen_range(scene.speed.0..=scene.speed.1),
        acceleration: rng.gen_range(-scene.max_acceleration..=scene.max_acceleration),
        yaw_rate: rng.gen_range(-scene.max_yaw_rate..=scene.max_yaw_rate),
        jitter: scene.jitter,
    }
}

fn overlaps(a: &[Box3D], b: &[Box3D]) -> bool {
    a.iter().zip(b).any(|(x, y)| giou_3d(x, y).iou > 0.0)
}

/// Distractor trajectory near `target`, or `None` after 10 overlapping tries.
fn place_distractor(target: &[Box3D], others: &[Vec<Box3D>], scene: &SceneConfig, rng: &mut impl Rng) -> Result<Option<Vec<Box3D>>> {
    use std::f64::consts::PI;
    for _ in 0..10 {
        let j = scene.shape.size_jitter;
        let size = scene.shape.size.map(|s| s * (1.0 + rng.gen_range(-j..=j)));
        let gap = rng.gen_range(scene.distractor_gap.0..scene.distractor_gap.1);
        let ang = rng.gen_range(-PI..PI);
        let dir = rng.gen_range(-PI..PI);
        let rel = rng.gen_range(0.0..=scene.distractor_rel_speed);
        let dh = rng.gen_range(-0.3..0.3);
        let boxes = target
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let t = k as f64;
                let c = [
                    b.center[0] + gap * ang.cos() + t * rel * dir.cos(),
                    b.center[1] + gap * ang.sin() + t * rel * dir.sin(),
                    scene.ground_z + size[2] / 2.0,
                ];
                Box3D::new(c, size, b.heading + dh)
            })
            .collect::<Result<Vec<_>>>()?;
        if !overlaps(&boxes, target) && !others.iter().any(|o| overlaps(&boxes, o)) {
            return Ok(Some(boxes));
        }
    }
    Ok(None)
}

/// A tracklet with randomly drawn motion, distractors and occlusions.
pub fn random_tracklet(scene: &SceneConfig, id: u64, seed: u64) -> Result<Tracklet> {
    scene.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = random_motion(scene, &mut rng);
    let boxes = motion.integrate(scene.shape.size, scene.frames, &mut rng)?;
    let count = rng.gen_range(scene.distractors.0..=scene.distractors.1);
    let mut distractors = Vec::with_capacity(count);
    for _ in 0..count {
        if let Some(d) = place_distractor(&boxes, &distractors, scene, &mut rng)? {
            distractors.push(d);
        }
    }
    render(id, &boxes, &distractors, scene, &mut rng)
}

/// `count` tracklets with ids `0..count`, all derived from `seed`.
pub fn generate_split(scene: &SceneConfig, count: usize, seed: u64) -> Result<Vec<Tracklet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.gen()).collect();
    seeds
        .into_iter()
        .enumerate()
        .map(|(i, s)| random_tracklet(scene, i as u64, s))
        .collect()
}
