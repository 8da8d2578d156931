//! Tracklets: synthetic generation, training-time enhancement and
//! augmentation, and the line-delimited file format.

mod augment;
mod enhance;
mod io;
mod synth;

pub use augment::{augment, AugmentConfig, TrainWindow};
pub use enhance::sequence_enhance;
pub use io::{read_tracklets, write_tracklets, TrackletLine};
pub use synth::{generate_split, generate_tracklet, random_tracklet, MotionModel, SceneConfig, ShapeSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Box3D, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: i64,
    pub points: Vec<Point>,
    pub gt: Box3D,
}

/// One object's track: per-frame world points and GT boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u64,
    pub category: String,
    pub frames: Vec<Frame>,
}

impl Tracklet {
    /// Checks the invariants: at least 2 frames, increasing timestamps,
    /// constant box size.
    pub fn new(id: u64, category: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(
                "Tracklet",
                format!("track {id} has {} frames, need at least 2", frames.len()),
            ));
        }
        let size = frames[0].gt.size;
        for w in frames.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::invalid("Tracklet", format!("track {id}: timestamps must increase")));
            }
        }
        if frames.iter().any(|f| f.gt.size != size) {
            return Err(Error::invalid("Tracklet", format!("track {id}: box size changes between frames")));
        }
        Ok(Self {
            id,
            category: category.into(),
            frames,
        })
    }

    pub fn size(&self) -> [f64; 3] {
        self.frames[0].gt.size
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `start..start + len` as a new tracklet with the same id.
    pub fn window(&self, start: usize, len: usize) -> Result<Tracklet> {
        if start + len > self.frames.len() {
            return Err(Error::invalid(
                "window",
                format!("{start}+{len} exceeds {} frames", self.frames.len()),
            ));
        }
        Ok(Tracklet {
            id: self.id,
            category: self.category.clone(),
            frames: self.frames[start..start + len].to_vec(),
        })
    }

    pub fn gt_boxes(&self) -> Vec<Box3D> {
        self.frames.iter().map(|f| f.gt).collect()
    }

    /// `(timestamp, points)` per frame, the tracker's input.
    pub fn stream(&self) -> Vec<(i64, Vec<Point>)> {
        self.frames.iter().map(|f| (f.t, f.points.clone())).collect()
    }
}
