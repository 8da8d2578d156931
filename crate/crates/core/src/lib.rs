//! Streaming 3D single-object tracking on LiDAR-like point clouds.
//!
//! The tracker treats a sequence as a stream: each step only the current
//! frame runs through the set-abstraction backbone, while features and box
//! predictions of the last `n` frames come from a [`memory::MemoryBank`].
//! A transformer encoder with hybrid (global + local) attention relates
//! all frames, and a query-based decoder selects the tracked box.
//! Training adds per-layer point supervision, single-positive box matching
//! and an InfoNCE loss anchored by a momentum-decoded ground-truth query.
//!
//! Modules, bottom-up:
//!
//! - [`tensor`]: `f64` tensors with reverse-mode autodiff, Adam, checkpoints
//! - [`geom`]: boxes, rigid transforms, sampling, rotated 3D IoU/GIoU
//! - [`backbone`]: translation-invariant two-stage set abstraction
//! - [`encoder`]: point masks, embeddings, hybrid attention, point loss
//! - [`decoder`]: queries, matching, box/contrastive losses, momentum EMA
//! - [`model`]: the assembled network and its configuration
//! - [`memory`]: memory bank and the streaming tracker loop
//! - [`data`]: synthetic tracklets, augmentation, tracklet files
//! - [`harness`]: total loss, training, one-pass evaluation, experiment config

pub mod backbone;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geom;
pub mod harness;
pub mod memory;
pub mod model;
pub mod tensor;

pub use error::{Error, Result};
