//! Total loss and the per-window training objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrainWindow;
use crate::decoder::{box_loss, infonce_loss, BoxLossWeights, MatchWeights};
use crate::encoder::{point_loss, point_targets, PointLossWeights};
use crate::error::{Error, Result};
use crate::geom::{canonicalize, decanonicalize, Box3D, Point};
use crate::memory::{assemble_frames, crop, resample, HistoryFrame, TrackerConfig};
use crate::model::Model;
use crate::tensor::{Binding, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub point: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub aux: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    pub point_terms: PointLossWeights,
    pub box_terms: BoxLossWeights,
    pub matching: MatchWeights,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            point: 1.0,
            bbox: 2.0,
            aux: 0.05,
            tau: 1.0,
            point_terms: PointLossWeights::default(),
            box_terms: BoxLossWeights::default(),
            matching: MatchWeights::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let p = &self.point_terms;
        let b = &self.box_terms;
        let all = [
            self.point,
            self.bbox,
            self.aux,
            p.objectiveness,
            p.distance,
            b.cls,
            b.reg,
            b.offset,
            b.theta,
            b.giou,
            b.focal_alpha,
            b.focal_gamma,
            self.matching.cls,
            self.matching.giou,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

/// `λ_point·L_point + λ_box·L_box + λ_aux·L_aux`.
pub fn total_loss(point: &Tensor, bbox: &Tensor, aux: &Tensor, w: &LossWeights) -> Result<Tensor> {
    point.scale(w.point).add(&bbox.scale(w.bbox))?.add(&aux.scale(w.aux))
}

/// A window after cropping and resampling: what the network sees.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    /// Per frame, oldest first: sampled points in the canonical frame of
    /// that frame's reference.
    pub points: Vec<Vec<Point>>,
    /// Per frame, the box defining its canonical frame.
    pub frames_ref: Vec<Box3D>,
    /// Per frame, the (possibly shifted) box stored as history.
    pub history_boxes: Vec<Box3D>,
    pub gt: Vec<Box3D>,
    pub size: [f64; 3],
}

impl PreparedWindow {
    pub fn history(&self) -> usize {
        self.points.len() - 1
    }
}

/// Crops and resamples every frame of an augmented window. Frame `j` is
/// expressed relative to reference `j − 1`; the oldest frame uses its own.
/// `None` if some crop is empty.
pub fn prepare_window(w: &TrainWindow, points: usize, tracker: &TrackerConfig, rng: &mut impl Rng) -> Option<PreparedWindow> {
    let frames = &w.tracklet.frames;
    let mut out = PreparedWindow {
        points: Vec::with_capacity(frames.len()),
        frames_ref: Vec::with_capacity(frames.len()),
        history_boxes: w.references.clone(),
        gt: w.tracklet.gt_boxes(),
        size: w.tracklet.size(),
    };
    for (j, f) in frames.iter().enumerate() {
        let r = w.references[j.saturating_sub(1)];
        let region = crop(&f.points, &r, tracker.crop_radius(&r));
        if region.is_empty() {
            return None;
        }
        out.points.push(canonicalize(&resample(&region, points, rng), &r));
        out.frames_ref.push(r);
    }
    Some(out)
}

/// Loss terms of one window, kept separate for logging.
pub struct WindowLoss {
    pub total: Tensor,
    pub point: f64,
    pub bbox: f64,
    pub aux: f64,
    pub gt_embed: Option<Vec<Vec<f64>>>,
}

/// Source of the GT embedding that anchors the contrastive term.
#[derive(Clone, Copy)]
pub enum GtEmbed<'a> {
    /// No contrastive term.
    Off,
    /// Computed by the momentum decoder.
    Momentum(&'a Binding<'a>),
    /// Given per layer, e.g. frozen for a finite-difference check.
    Fixed(&'a [Vec<f64>]),
}

/// Backbone on every frame, then encoder/decoder on the newest frame with
/// the older ones as history. `momentum` enables the contrastive term.
pub fn window_loss(
    model: &Model,
    p: &Binding,
    momentum: Option<&Binding>,
    w: &PreparedWindow,
    weights: &LossWeights,
) -> Result<WindowLoss> {
    let embed = match momentum {
        Some(m) => GtEmbed::Momentum(m),
        None => GtEmbed::Off,
    };
    window_loss_with(model, p, embed, w, weights)
}

/// [`window_loss`] with an explicit GT embedding source. The embedding that
/// was used is returned in [`WindowLoss::gt_embed`].
pub fn window_loss_with(model: &Model, p: &Binding, embed: GtEmbed, w: &PreparedWindow, weights: &LossWeights) -> Result<WindowLoss> {
    let n = w.history();
    if n != model.cfg.history {
        return Err(Error::shape("window_loss", &[model.cfg.history + 1], &[w.points.len()]));
    }
    let feats = w
        .points
        .iter()
        .map(|pts| model.backbone.extract(p, pts))
        .collect::<Result<Vec<_>>>()?;
    let history: Vec<HistoryFrame> = (0..n)
        .rev()
        .map(|j| HistoryFrame {
            coords_world: decanonicalize(&feats[j].coords, &w.frames_ref[j]),
            feats: feats[j].feats.clone(),
            box_world: w.history_boxes[j],
        })
        .collect();
    let reference = w.frames_ref[n];
    let input = assemble_frames(&feats[n], &reference, &history, n)?;
    let gt_by_index: Vec<Box3D> = (0..=n).map(|i| w.gt[n - i]).collect();
    let targets = point_targets(&input, &gt_by_index)?;
    let gt = w.gt[n].transformed(&reference.pose().inverse());

    let out = model.forward(p, &input, None)?;
    let lp = point_loss(&out.enc.s, &out.enc.d, &targets, &weights.point_terms)?;
    let (lb, matches) = box_loss(
        &out.dec.layers,
        &out.query_coords,
        &w.size,
        &gt,
        &weights.matching,
        &weights.box_terms,
    )?;
    let g = match embed {
        GtEmbed::Off => None,
        GtEmbed::Momentum(m) => Some(
            model
                .decoder
                .momentum_embed(p, m, &out.query_coords, gt.center, &out.enc.tokens, &out.enc.pe)?,
        ),
        GtEmbed::Fixed(v) => Some(v.to_vec()),
    };
    let la = match &g {
        Some(g) => infonce_loss(&out.dec.layers, g, &matches, weights.tau)?,
        None => Tensor::scalar(0.0),
    };
    Ok(WindowLoss {
        total: total_loss(&lp, &lb, &la, weights)?,
        point: lp.item(),
        bbox: lb.item(),
        aux: la.item(),
        gt_embed: g,
    })
}
