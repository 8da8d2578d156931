//! Memory bank of past frames and the streaming tracker.
//!
//! Only the current frame goes through the backbone at each step. The last
//! `n` frames' features, sampled points (world coordinates) and box
//! predictions come from the bank and are re-expressed in the canonical
//! frame of the newest stored box before entering the encoder.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::FrameFeatures;
use crate::error::{Error, Result};
use crate::geom::{canonicalize, decanonicalize, dist, Box3D, Point};
use crate::model::Model;
use crate::tensor::{Binding, ParamStore, Tensor};

/// One stored frame. `feats` is row-major `coords_world.len() × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp: i64,
    pub coords_world: Vec<Point>,
    pub feats: Vec<f64>,
    pub width: usize,
    pub box_world: Box3D,
}

impl FrameRecord {
    /// Stores backbone output computed in the canonical frame of `reference`.
    pub fn from_canonical(timestamp: i64, f: &FrameFeatures, reference: &Box3D, box_world: Box3D) -> Self {
        Self {
            timestamp,
            coords_world: decanonicalize(&f.coords, reference),
            feats: f.feats.to_vec(),
            width: f.feats.shape()[1],
            box_world,
        }
    }

    fn as_history(&self) -> Result<HistoryFrame> {
        Ok(HistoryFrame {
            coords_world: self.coords_world.clone(),
            feats: Tensor::new(self.feats.clone(), &[self.coords_world.len(), self.width])?,
            box_world: self.box_world,
        })
    }
}

/// FIFO of the last `capacity` frames, newest last.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<FrameRecord>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("MemoryBank::new", "capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &FrameRecord> {
        self.entries.iter()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.entries.iter().map(|r| r.timestamp).collect()
    }

    pub fn newest(&self) -> Option<&FrameRecord> {
        self.entries.back()
    }

    pub fn push(&mut self, rec: FrameRecord) -> Result<()> {
        if let Some(last) = self.newest() {
            if rec.timestamp <= last.timestamp {
                return Err(Error::NonMonotoneTimestamp {
                    last: last.timestamp,
                    got: rec.timestamp,
                });
            }
        }
        self.entries.push_back(rec);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    /// Builds the encoder input from the current frame (coords canonical to
    /// the newest stored box) and the stored history.
    pub fn assemble(&self, current: &FrameFeatures) -> Result<StreamInput> {
        let reference = self.newest().ok_or(Error::EmptyBank)?.box_world;
        let history = self.entries.iter().rev().map(FrameRecord::as_history).collect::<Result<Vec<_>>>()?;
        assemble_frames(current, &reference, &history, self.capacity)
    }
}

/// A past frame as seen by [`assemble_frames`].
#[derive(Debug, Clone)]
pub struct HistoryFrame {
    pub coords_world: Vec<Point>,
    pub feats: Tensor,
    pub box_world: Box3D,
}

/// Tokens of the current frame and `n` past frames in one common frame.
///
/// Token block `i` holds temporal index `i`: block 0 is the current frame,
/// block `i` the frame `i` steps back.
#[derive(Debug, Clone)]
pub struct StreamInput {
    pub coords: Vec<Point>,
    pub coords_world: Vec<Point>,
    pub feats: Tensor,
    pub temporal: Vec<usize>,
    /// World box per temporal index; `None` for the current frame.
    pub frame_boxes: Vec<Option<Box3D>>,
    /// The box whose canonical frame `coords` are expressed in.
    pub reference: Box3D,
    pub tokens_per_frame: usize,
}

impl StreamInput {
    pub fn frames(&self) -> usize {
        self.frame_boxes.len()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn frame_of(&self, token: usize) -> usize {
        token / self.tokens_per_frame
    }
}

/// `history` is newest first. Fewer than `n` entries are padded by
/// repeating the earliest one.
pub fn assemble_frames(current: &FrameFeatures, reference: &Box3D, history: &[HistoryFrame], n: usize) -> Result<StreamInput> {
    if n > 0 && history.is_empty() {
        return Err(Error::EmptyBank);
    }
    let k = current.coords.len();
    let width = current.feats.shape()[1];
    let mut coords = current.coords.clone();
    let mut coords_world = decanonicalize(&current.coords, reference);
    let mut feats = vec![current.feats.clone()];
    let mut temporal = vec![0; k];
    let mut frame_boxes = vec![None];
    for i in 1..=n {
        let h = &history[(i - 1).min(history.len() - 1)];
        if h.coords_world.len() != k || h.feats.shape() != [k, width] {
            return Err(Error::shape("assemble", &[k, width], h.feats.shape()));
        }
        coords.extend(canonicalize(&h.coords_world, reference));
        coords_world.extend_from_slice(&h.coords_world);
        feats.push(h.feats.clone());
        temporal.extend(std::iter::repeat(i).take(k));
        frame_boxes.push(Some(h.box_world));
    }
    let parts: Vec<&Tensor> = feats.iter().collect();
    Ok(StreamInput {
        coords,
        coords_world,
        feats: Tensor::concat(&parts, 0)?,
        temporal,
        frame_boxes,
        reference: *reference,
        tokens_per_frame: k,
    })
}

/// Search-region and sampling settings of the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Crop radius is `max(w, l, h) · crop_scale + crop_margin` meters.
    pub crop_scale: f64,
    pub crop_margin: f64,
    /// Base seed of the per-frame resampling generator.
    pub sample_seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            crop_scale: 2.0,
            crop_margin: 2.0,
            sample_seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn crop_radius(&self, b: &Box3D) -> f64 {
        b.size.iter().copied().fold(0.0, f64::max) * self.crop_scale + self.crop_margin
    }
}

/// Points within the crop radius of `b`'s center, in input order.
pub fn crop(points: &[Point], b: &Box3D, radius: f64) -> Vec<Point> {
    points.iter().copied().filter(|p| dist(p, &b.center) <= radius).collect()
}

/// Draws exactly `n` points: a random subset if there are enough, otherwise
/// all of them plus draws with replacement.
pub fn resample(points: &[Point], n: usize, rng: &mut impl Rng) -> Vec<Point> {
    if points.len() >= n {
        return points.choose_multiple(rng, n).copied().collect();
    }
    let mut out = points.to_vec();
    while out.len() < n {
        out.push(points[rng.gen_range(0..points.len())]);
    }
    out.shuffle(rng);
    out
}

/// Crop around `reference` and resample to `n` (world coordinates). `None`
/// if the crop is empty.
pub fn prepare_frame(points: &[Point], reference: &Box3D, n: usize, cfg: &TrackerConfig, timestamp: i64) -> Option<Vec<Point>> {
    let region = crop(points, reference, cfg.crop_radius(reference));
    if region.is_empty() {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed ^ (timestamp as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    Some(resample(&region, n, &mut rng))
}

/// Per-sequence tracker state.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub bank: MemoryBank,
    /// Object size from the frame-0 box; never re-estimated.
    pub size: [f64; 3],
    pub last_box: Box3D,
    pub last_timestamp: i64,
}

/// One step's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub timestamp: i64,
    pub box_world: Box3D,
    pub score: f64,
}

/// Streaming tracker bound to trained parameters.
pub struct Tracker<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore,
    pub cfg: TrackerConfig,
}

impl<'a> Tracker<'a> {
    pub fn new(model: &'a Model, params: &'a ParamStore, cfg: TrackerConfig) -> Self {
        Self { model, params, cfg }
    }

    fn input_points(&self) -> usize {
        self.model.cfg.backbone.input_points
    }

    /// Seeds the bank with frame-0 features computed in the GT box's
    /// canonical frame.
    pub fn init_track(&self, points: &[Point], gt: &Box3D, timestamp: i64) -> Result<TrackState> {
        let sampled = prepare_frame(points, gt, self.input_points(), &self.cfg, timestamp)
            .ok_or_else(|| Error::invalid("init_track", "no points near the initial box"))?;
        let p = Binding::frozen(self.params);
        let f = self.model.backbone.extract(&p, &canonicalize(&sampled, gt))?;
        let mut bank = MemoryBank::new(self.model.cfg.history)?;
        bank.push(FrameRecord::from_canonical(timestamp, &f, gt, *gt))?;
        Ok(TrackState {
            bank,
            size: gt.size,
            last_box: *gt,
            last_timestamp: timestamp,
        })
    }

    pub fn track_step(&self, state: &mut TrackState, points: &[Point], timestamp: i64) -> Result<StepOutput> {
        let reference = state.last_box;
        let Some(sampled) = prepare_frame(points, &reference, self.input_points(), &self.cfg, timestamp) else {
            warn!("t={timestamp}: empty search region, carrying the previous box forward");
            return self.carry_forward(state, timestamp);
        };
        let p = Binding::frozen(self.params);
        let f = self.model.backbone.extract(&p, &canonicalize(&sampled, &reference))?;
        let input = state.bank.assemble(&f)?;
        let pred = self.model.predict(&p, &input, &state.size)?;
        state
            .bank
            .push(FrameRecord::from_canonical(timestamp, &f, &reference, pred.box_world))?;
        state.last_box = pred.box_world;
        state.last_timestamp = timestamp;
        Ok(StepOutput {
            timestamp,
            box_world: pred.box_world,
            score: pred.score,
        })
    }

    fn carry_forward(&self, state: &mut TrackState, timestamp: i64) -> Result<StepOutput> {
        if let Some(newest) = state.bank.newest() {
            let mut rec = newest.clone();
            rec.timestamp = timestamp;
            state.bank.push(rec)?;
        }
        state.last_timestamp = timestamp;
        Ok(StepOutput {
            timestamp,
            box_world: state.last_box,
            score: 0.0,
        })
    }

    /// Tracks a whole sequence given frame-0 GT. Frame 0 is reported as the
    /// given box with score 1.
    pub fn run(&self, frames: &[(i64, Vec<Point>)], gt0: &Box3D) -> Result<Vec<StepOutput>> {
        let Some(((t0, p0), rest)) = frames.split_first() else {
            return Ok(Vec::new());
        };
        let mut state = self.init_track(p0, gt0, *t0)?;
        let mut out = vec![StepOutput {
            timestamp: *t0,
            box_world: *gt0,
            score: 1.0,
        }];
        for (t, pts) in rest {
            out.push(self.track_step(&mut state, pts, *t)?);
        }
        Ok(out)
    }
}

/// Line format of trajectory files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub t: i64,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub heading: f64,
    pub score: f64,
}

impl From<&StepOutput> for TrajectoryRecord {
    fn from(s: &StepOutput) -> Self {
        Self {
            t: s.timestamp,
            center: s.box_world.center,
            size: s.box_world.size,
            heading: s.box_world.heading,
            score: s.score,
        }
    }
}

impl TrajectoryRecord {
    pub fn to_box(&self) -> Result<Box3D> {
        Box3D::new(self.center, self.size, self.heading)
    }
}

pub fn write_trajectory(path: &Path, steps: &[TrajectoryRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in steps {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
