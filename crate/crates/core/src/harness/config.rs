//! Experiment configuration: two built-in profiles, optionally overridden
//! by a TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::backbone::BackboneConfig;
use crate::data::{AugmentConfig, SceneConfig};
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::memory::TrackerConfig;
use crate::model::ModelConfig;
use crate::tensor::optim::{AdamConfig, StepDecay};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub lr: StepDecay,
    pub adam: AdamConfig,
    /// EMA coefficient of the momentum decoder.
    pub momentum: f64,
    pub loss: LossWeights,
    /// Attach pooled tracklets as moving negatives.
    pub sequence_enhancement: bool,
    /// GT query through the momentum decoder plus the InfoNCE term.
    pub contrastive: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, steps_per_epoch and batch_size must be positive".into()));
        }
        if !(self.lr.base_lr > 0.0) || !(self.lr.gamma > 0.0) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1], got {}", self.momentum)));
        }
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_scene: SceneConfig,
    pub test_scene: SceneConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    /// Read tracklet files instead of generating.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub tracker: TrackerConfig,
    pub data: DataConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Toy dimensions that train in minutes on one core.
    Desk,
    /// Full-size network and long schedule; too slow for a CPU.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}` (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

fn test_scene() -> SceneConfig {
    SceneConfig {
        distractors: (1, 2),
        ..SceneConfig::default()
    }
}

/// The small desk model needs a stronger classification term to pick the
/// right query; the matching cost keeps its default weights.
fn desk_loss() -> LossWeights {
    let mut w = LossWeights::default();
    w.box_terms.cls = 1.0;
    w
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            model: ModelConfig {
                history: 2,
                backbone: BackboneConfig {
                    input_points: 256,
                    stage_points: vec![64, 32],
                    radii: vec![0.3, 0.5],
                    neighbor_cap: 16,
                    channels: vec![32, 32],
                },
                encoder: EncoderConfig {
                    layers: 2,
                    radii: vec![0.6, 1.0],
                    heads: 2,
                    ..EncoderConfig::default()
                },
                decoder: DecoderConfig {
                    layers: 2,
                    heads: 2,
                    ..DecoderConfig::default()
                },
            },
            train: TrainConfig {
                epochs: 24,
                steps_per_epoch: 60,
                batch_size: 8,
                lr: StepDecay {
                    base_lr: 1e-3,
                    gamma: 0.1,
                    every: 16,
                },
                adam: AdamConfig::default(),
                momentum: 0.99,
                loss: desk_loss(),
                sequence_enhancement: true,
                contrastive: true,
            },
            augment: AugmentConfig::default(),
            tracker: TrackerConfig::default(),
            data: DataConfig {
                train_scene: SceneConfig::default(),
                test_scene: test_scene(),
                train_count: 200,
                test_count: 50,
                train_seed: 1,
                test_seed: 2,
                train_path: None,
                test_path: None,
            },
        }
    }

    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.model = ModelConfig::default();
        c.train.loss = LossWeights::default();
        c.train.epochs = 60;
        c.train.steps_per_epoch = 1000;
        c.train.batch_size = 64;
        c.train.lr = StepDecay {
            base_lr: 3e-4,
            gamma: 0.1,
            every: 25,
        };
        c
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// The profile with `path` (if any) deep-merged on top, validated.
    pub fn load(profile: Profile, path: Option<&Path>) -> Result<Self> {
        let base = Self::profile(profile);
        let Some(path) = path else {
            base.validate()?;
            return Ok(base);
        };
        let text = std::fs::read_to_string(path)?;
        let overlay: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        deep_merge(&mut merged, overlay);
        let cfg: Self = merged.try_into().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.data.train_scene.validate()?;
        self.data.test_scene.validate()?;
        if self.data.train_scene.frames <= self.model.history {
            return Err(Error::Config("training tracklets are shorter than a window".into()));
        }
        Ok(())
    }
}

/// Tables merge key by key; anything else in `overlay` replaces `base`.
fn deep_merge(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
