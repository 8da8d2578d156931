//! Training, one-pass evaluation, experiment configuration and the
//! finite-difference suite.

pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod loss;
pub mod train;

pub use config::{DataConfig, ExperimentConfig, Profile, TrainConfig};
pub use eval::{aggregate, ope_evaluate, precision_auc, sequence_metrics, EvalReport, SequenceReport};
pub use loss::{prepare_window, total_loss, window_loss, window_loss_with, GtEmbed, LossWeights, PreparedWindow, WindowLoss};
pub use train::{load_trained, overfit, sample_window, train, train_step, EpochRecord, Trained};

use crate::data::{generate_split, read_tracklets, Tracklet};
use crate::error::Result;

/// Train and test tracklets as configured: read from files when paths are
/// given, otherwise generated.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Vec<Tracklet>, Vec<Tracklet>)> {
    let d = &cfg.data;
    let train = match &d.train_path {
        Some(p) => read_tracklets(p)?,
        None => generate_split(&d.train_scene, d.train_count, d.train_seed)?,
    };
    let test = match &d.test_path {
        Some(p) => read_tracklets(p)?,
        None => generate_split(&d.test_scene, d.test_count, d.test_seed)?,
    };
    Ok((train, test))
}
