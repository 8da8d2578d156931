//! Two-stage set abstraction.
//!
//! Each stage picks centers by farthest-point sampling, gathers a ball
//! neighborhood per center, runs a shared MLP over
//! `[(p_j − c) / r, f_j]` and max-pools over the neighborhood. Only relative
//! coordinates enter the network, so features do not depend on where the
//! cloud sits in space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ball_query, farthest_point_sample, Point};
use crate::tensor::nn::Mlp;
use crate::tensor::{Binding, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub input_points: usize,
    pub stage_points: Vec<usize>,
    pub radii: Vec<f64>,
    pub neighbor_cap: usize,
    /// Output width of each stage; the last one is the model width `C`.
    pub channels: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_points: 1024,
            stage_points: vec![512, 128],
            radii: vec![0.3, 0.5],
            neighbor_cap: 32,
            channels: vec![64, 64],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("backbone: {msg}")));
        let s = self.stage_points.len();
        if s == 0 || self.radii.len() != s || self.channels.len() != s {
            return bad("stage_points, radii and channels must be non-empty and equally long".into());
        }
        let mut prev = self.input_points;
        for &k in &self.stage_points {
            if k == 0 || k >= prev {
                return bad(format!("stage point counts must strictly decrease from {}", self.input_points));
            }
            prev = k;
        }
        if self.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("radii must be positive".into());
        }
        if self.neighbor_cap == 0 || self.channels.contains(&0) {
            return bad("neighbor_cap and channels must be positive".into());
        }
        Ok(())
    }

    /// Number of output tokens `N'`.
    pub fn output_points(&self) -> usize {
        *self.stage_points.last().expect("validated")
    }

    pub fn width(&self) -> usize {
        *self.channels.last().expect("validated")
    }
}

/// Sampled points and their features, row-aligned.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    pub coords: Vec<Point>,
    pub feats: Tensor,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: BackboneConfig,
    stages: Vec<Mlp>,
}

impl Backbone {
    pub fn new(prefix: &str, cfg: BackboneConfig) -> Result<Self> {
        cfg.validate()?;
        let mut din = 0;
        let stages = cfg
            .channels
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                let mlp = Mlp::new(&format!("{prefix}.sa{s}"), &[3 + din, c, c]);
                din = c;
                mlp
            })
            .collect();
        Ok(Self { cfg, stages })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.stages.iter().try_for_each(|m| m.init(store, rng))
    }

    /// Runs both stages on exactly `cfg.input_points` points. Output coords
    /// are in the same frame as the input.
    pub fn extract(&self, p: &Binding, points: &[Point]) -> Result<FrameFeatures> {
        if points.len() != self.cfg.input_points {
            return Err(Error::invalid(
                "extract",
                format!("expected {} points, got {}", self.cfg.input_points, points.len()),
            ));
        }
        let cap = self.cfg.neighbor_cap;
        let mut coords = points.to_vec();
        let mut feats: Option<Tensor> = None;
        for (s, mlp) in self.stages.iter().enumerate() {
            let k = self.cfg.stage_points[s];
            let r = self.cfg.radii[s];
            let centers: Vec<Point> = farthest_point_sample(&coords, k, 0)?.into_iter().map(|i| coords[i]).collect();
            let groups = ball_query(&coords, &centers, r, cap)?;
            let mut flat = Vec::with_capacity(k * cap);
            let mut rel = Vec::with_capacity(k * cap * 3);
            for (c, g) in centers.iter().zip(&groups) {
                for slot in 0..cap {
                    // Short neighborhoods repeat their nearest member; max-pooling
                    // is unaffected by duplicates.
                    let j = *g.get(slot).unwrap_or(&g[0]);
                    flat.push(j);
                    let q = coords[j];
                    rel.extend((0..3).map(|a| (q[a] - c[a]) / r));
                }
            }
            let rel = Tensor::new(rel, &[k * cap, 3])?;
            let input = match &feats {
                None => rel,
                Some(f) => Tensor::concat(&[&rel, &f.gather_rows(&flat)?], 1)?,
            };
            let h = mlp.forward_relu(p, &input)?;
            let width = h.shape()[1];
            feats = Some(h.reshape(&[k, cap, width])?.max_axis(1)?);
            coords = centers;
        }
        Ok(FrameFeatures {
            coords,
            feats: feats.expect("at least one stage"),
        })
    }
}
