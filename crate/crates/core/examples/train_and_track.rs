//! Trains a desk model with a shortened schedule, then tracks the test split
//! with the streaming tracker and reports OPE metrics.
//!
//! `cargo run --release --example train_and_track -- [epochs]`

use std::time::Instant;

use streamtrack::harness::{load_splits, ope_evaluate, train, ExperimentConfig};
use streamtrack::memory::Tracker;

fn main() -> streamtrack::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = ExperimentConfig::desk();
    if let Some(e) = std::env::args().nth(1) {
        cfg.train.epochs = e.parse().expect("epochs");
    }
    let (train_set, test_set) = load_splits(&cfg)?;
    let start = Instant::now();
    let trained = train(&cfg, &train_set)?;
    println!("trained {} epochs in {:.0}s", cfg.train.epochs, start.elapsed().as_secs_f64());

    let tracker = Tracker::new(&trained.model, &trained.live, cfg.tracker.clone());
    let report = ope_evaluate(&tracker, &test_set)?;
    println!(
        "test: success {:.2} precision {:.2} ({} frames)",
        report.success, report.precision, report.frames
    );
    let worst = report.sequences.iter().min_by(|a, b| a.success.total_cmp(&b.success)).unwrap();
    println!("hardest sequence {}: success {:.2}", worst.id, worst.success);
    Ok(())
}
