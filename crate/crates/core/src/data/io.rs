use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, Tracklet};
use crate::error::{Error, Result};
use crate::geom::{Box3D, Point};

/// One frame of a tracklet file. Consecutive lines with the same `track`
/// form one tracklet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackletLine {
    pub track: u64,
    pub t: i64,
    pub category: String,
    /// `[cx, cy, cz, w, l, h, heading]`
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub points: Vec<Point>,
}

impl TrackletLine {
    fn from_frame(track: &Tracklet, f: &Frame) -> Self {
        let b = &f.gt;
        Self {
            track: track.id,
            t: f.t,
            category: track.category.clone(),
            bbox: [b.center[0], b.center[1], b.center[2], b.size[0], b.size[1], b.size[2], b.heading],
            points: f.points.clone(),
        }
    }
}

pub fn write_tracklets(tracklets: &[Tracklet], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in tracklets {
        for f in &t.frames {
            serde_json::to_writer(&mut w, &TrackletLine::from_frame(t, f))?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tracklets(path: impl AsRef<Path>) -> Result<Vec<Tracklet>> {
    let path = path.as_ref();
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    // (first line, id, category, frames)
    let mut groups: Vec<(usize, u64, String, Vec<Frame>)> = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrackletLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let [cx, cy, cz, w, l, h, th] = rec.bbox;
        let gt = Box3D::new([cx, cy, cz], [w, l, h], th).map_err(|e| parse_err(lineno, format!("field `box`: {e}")))?;
        let frame = Frame {
            t: rec.t,
            points: rec.points,
            gt,
        };
        match groups.last_mut() {
            Some((_, id, cat, frames)) if *id == rec.track => {
                if *cat != rec.category {
                    return Err(parse_err(lineno, format!("field `category`: changes within track {id}")));
                }
                frames.push(frame);
            }
            _ => groups.push((lineno, rec.track, rec.category, vec![frame])),
        }
    }
    groups
        .into_iter()
        .map(|(line, id, cat, frames)| Tracklet::new(id, cat, frames).map_err(|e| parse_err(line, e.to_string())))
        .collect()
}
