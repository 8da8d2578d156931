//! Trains on one fixed window and prints the loss curve.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streamtrack::harness::{load_splits, overfit, sample_window, ExperimentConfig};

fn main() -> streamtrack::Result<()> {
    let cfg = ExperimentConfig::desk();
    let (train, _) = load_splits(&cfg)?;
    let window = sample_window(&cfg, &train, &mut ChaCha8Rng::seed_from_u64(12))?;
    let losses = overfit(&cfg, &window, 201, cfg.train.lr.base_lr)?;
    for (step, l) in losses.iter().enumerate().step_by(25) {
        println!("step {step:>3}: {l:.4}");
    }
    println!("drop after 200 steps: {:.1}%", 100.0 * (1.0 - losses[200] / losses[0]));
    Ok(())
}
