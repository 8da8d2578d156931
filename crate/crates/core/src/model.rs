//! The full network: backbone, hybrid-attention encoder and query decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::decoder::{decode_box, Decoder, DecoderConfig, DecoderOutput};
use crate::encoder::{build_point_mask, Encoder, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::geom::{Box3D, Point};
use crate::memory::StreamInput;
use crate::tensor::{Binding, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of historical frames `n`.
    pub history: usize,
    pub backbone: BackboneConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            history: 2,
            backbone: BackboneConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::Config("history must be at least 1".into()));
        }
        self.backbone.validate()?;
        self.encoder.validate(self.backbone.width())?;
        self.decoder.validate(self.backbone.width())
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Everything one forward pass produces.
pub struct ModelOutput {
    pub enc: EncoderOutput,
    pub dec: DecoderOutput,
    /// Canonical coordinates of the queries (the current frame's tokens).
    pub query_coords: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub box_world: Box3D,
    pub box_canonical: Box3D,
    /// Sigmoid of the winning query's logit.
    pub score: f64,
    pub index: usize,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.backbone.width();
        Ok(Self {
            backbone: Backbone::new("bb", cfg.backbone.clone())?,
            encoder: Encoder::new("enc", cfg.encoder.clone(), dim, cfg.history + 1)?,
            decoder: Decoder::new("dec", cfg.decoder.clone(), dim)?,
            cfg,
        })
    }

    /// Fresh live parameters and their momentum copy.
    pub fn init(&self, seed: u64) -> Result<(ParamStore, ParamStore)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut live = ParamStore::new();
        self.backbone.init(&mut live, &mut rng)?;
        self.encoder.init(&mut live, &mut rng)?;
        self.decoder.init(&mut live, &mut rng)?;
        let momentum = self.decoder.momentum_from(&live);
        Ok((live, momentum))
    }

    /// Encoder and decoder on an assembled input. `gt` enables the
    /// momentum GT query.
    pub fn forward(&self, p: &Binding, input: &StreamInput, gt: Option<(&Binding, Point)>) -> Result<ModelOutput> {
        let mask = build_point_mask(input);
        let enc = self.encoder.forward(p, input, &mask)?;
        let query_coords = input.coords[..input.tokens_per_frame].to_vec();
        let dec = self.decoder.decode(p, &query_coords, &enc.tokens, &enc.pe, gt)?;
        Ok(ModelOutput { enc, dec, query_coords })
    }

    /// Highest-scoring query of the last layer; ties go to the lowest index.
    pub fn predict(&self, p: &Binding, input: &StreamInput, size: &[f64; 3]) -> Result<Prediction> {
        let out = self.forward(p, input, None)?;
        let last = out
            .dec
            .layers
            .last()
            .ok_or_else(|| Error::invalid("predict", "decoder has no layers"))?;
        let logits = last.logits.data();
        let mut best = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = i;
            }
        }
        let boxes = last.boxes.data();
        let box_canonical = decode_box(&out.query_coords[best], &boxes[4 * best..4 * best + 4], size)?;
        Ok(Prediction {
            box_world: box_canonical.transformed(&input.reference.pose()),
            box_canonical,
            score: 1.0 / (1.0 + (-logits[best]).exp()),
            index: best,
        })
    }
}
