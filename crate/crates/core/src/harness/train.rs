//! The training loop.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::loss::{prepare_window, window_loss, PreparedWindow};
use crate::data::{augment, sequence_enhance, Tracklet};
use crate::decoder::momentum_update;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::optim::Adam;
use crate::tensor::params::{load_checkpoint, save_checkpoint};
use crate::tensor::{Binding, ParamStore, Tensor};

/// Mean losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub point: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub aux: f64,
}

pub struct Trained {
    pub model: Model,
    pub live: ParamStore,
    pub momentum: ParamStore,
    pub log: Vec<EpochRecord>,
}

impl Trained {
    /// Writes `checkpoint.json`, `config.toml` and `train_log.jsonl` to `dir`.
    pub fn save(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_checkpoint(&dir.join("checkpoint.json"), &[("live", &self.live), ("momentum", &self.momentum)])?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.jsonl"))?);
        for r in &self.log {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Reads a directory written by [`Trained::save`].
pub fn load_trained(dir: &Path) -> Result<(ExperimentConfig, Trained)> {
    let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(dir.join("config.toml"))?)?;
    let mut groups = load_checkpoint(&dir.join("checkpoint.json"))?;
    let mut take = |k: &str| {
        groups
            .remove(k)
            .ok_or_else(|| Error::UnknownParam(format!("checkpoint group `{k}`")))
    };
    let live = take("live")?;
    let momentum = take("momentum")?;
    let log = match std::fs::read_to_string(dir.join("train_log.jsonl")) {
        Ok(text) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?,
        Err(_) => Vec::new(),
    };
    let model = Model::new(cfg.model.clone())?;
    Ok((
        cfg,
        Trained {
            model,
            live,
            momentum,
            log,
        },
    ))
}

/// Draws one prepared training window: random tracklet and start,
/// augmentation, optional sequence enhancement, crop and resample.
pub fn sample_window(cfg: &ExperimentConfig, dataset: &[Tracklet], rng: &mut impl Rng) -> Result<PreparedWindow> {
    let len = cfg.model.history + 1;
    let eligible: Vec<&Tracklet> = dataset.iter().filter(|t| t.len() >= len).collect();
    if eligible.is_empty() {
        return Err(Error::invalid("train", format!("no tracklet has {len} frames")));
    }
    for _ in 0..100 {
        let t = eligible[rng.gen_range(0..eligible.len())];
        let window = t.window(rng.gen_range(0..=t.len() - len), len)?;
        let mut w = augment(&window, &cfg.augment, rng);
        if cfg.train.sequence_enhancement {
            w.tracklet = sequence_enhance(&w.tracklet, dataset, &cfg.augment, rng);
        }
        if let Some(p) = prepare_window(&w, cfg.model.backbone.input_points, &cfg.tracker, rng) {
            return Ok(p);
        }
    }
    Err(Error::invalid("train", "could not draw a window with points in every crop"))
}

/// Summed component losses of one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub point: f64,
    pub bbox: f64,
    pub aux: f64,
}

/// One optimizer step on the mean loss of `batch`, followed by the
/// momentum update when the contrastive term is enabled.
pub fn train_step(
    cfg: &ExperimentConfig,
    model: &Model,
    live: &mut ParamStore,
    momentum: &mut ParamStore,
    adam: &mut Adam,
    batch: &[PreparedWindow],
    lr: f64,
    step: usize,
) -> Result<StepLoss> {
    let contrastive = cfg.train.contrastive;
    let (grads, loss) = {
        let p = Binding::trainable(live);
        let m = Binding::frozen(momentum);
        let mut total = Tensor::scalar(0.0);
        let mut loss = StepLoss::default();
        let scale = 1.0 / batch.len() as f64;
        for w in batch {
            let l = window_loss(model, &p, contrastive.then_some(&m), w, &cfg.train.loss)?;
            loss.point += l.point * scale;
            loss.bbox += l.bbox * scale;
            loss.aux += l.aux * scale;
            total = total.add(&l.total.scale(scale))?;
        }
        loss.total = total.item();
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("point {} box {} aux {}", loss.point, loss.bbox, loss.aux),
            });
        }
        total.backward()?;
        (p.grads(), loss)
    };
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence {
            step,
            detail: format!("non-finite gradient in `{name}`"),
        });
    }
    adam.step(live, &grads, lr)?;
    if contrastive {
        momentum_update(live, momentum, cfg.train.momentum)?;
    }
    Ok(loss)
}

/// Trains a fresh model. Deterministic given `cfg.seed`.
pub fn train(cfg: &ExperimentConfig, dataset: &[Tracklet]) -> Result<Trained> {
    cfg.validate()?;
    let model = Model::new(cfg.model.clone())?;
    let (mut live, mut momentum) = model.init(cfg.seed)?;
    let mut adam = Adam::new(cfg.train.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66);
    let mut log = Vec::with_capacity(cfg.train.epochs);
    let start = Instant::now();
    let mut step = 0;
    for epoch in 0..cfg.train.epochs {
        let lr = cfg.train.lr.lr_at(epoch);
        let mut acc = StepLoss::default();
        for _ in 0..cfg.train.steps_per_epoch {
            let batch = (0..cfg.train.batch_size)
                .map(|_| sample_window(cfg, dataset, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let l = train_step(cfg, &model, &mut live, &mut momentum, &mut adam, &batch, lr, step)?;
            acc.total += l.total;
            acc.point += l.point;
            acc.bbox += l.bbox;
            acc.aux += l.aux;
            step += 1;
        }
        let k = cfg.train.steps_per_epoch as f64;
        let rec = EpochRecord {
            epoch,
            lr,
            total: acc.total / k,
            point: acc.point / k,
            bbox: acc.bbox / k,
            aux: acc.aux / k,
        };
        info!(
            "epoch {epoch}: total {:.4} point {:.4} box {:.4} aux {:.4} ({:.0}s)",
            rec.total,
            rec.point,
            rec.bbox,
            rec.aux,
            start.elapsed().as_secs_f64()
        );
        log.push(rec);
    }
    Ok(Trained {
        model,
        live,
        momentum,
        log,
    })
}

/// Repeated steps on one fixed window; returns the loss before each step.
pub fn overfit(cfg: &ExperimentConfig, window: &PreparedWindow, steps: usize, lr: f64) -> Result<Vec<f64>> {
    let model = Model::new(cfg.model.clone())?;
    let (mut live, mut momentum) = model.init(cfg.seed)?;
    let mut adam = Adam::new(cfg.train.adam);
    let batch = std::slice::from_ref(window);
    (0..steps)
        .map(|s| Ok(train_step(cfg, &model, &mut live, &mut momentum, &mut adam, batch, lr, s)?.total))
        .collect()
}
