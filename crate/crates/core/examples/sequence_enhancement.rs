//! Attaches a same-category tracklet next to a training window as a moving
//! distractor, then prints where the two objects sit in each frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use streamtrack::data::{generate_split, sequence_enhance, AugmentConfig};
use streamtrack::geom::{dist, point_in_box};
use streamtrack::harness::ExperimentConfig;

fn main() -> streamtrack::Result<()> {
    let cfg = ExperimentConfig::desk();
    let pool = generate_split(&cfg.data.train_scene, 20, 7)?;
    let window = pool[0].window(0, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Always enhance; training applies it with probability `rho`.
    let aug = AugmentConfig {
        rho: 1.0,
        ..AugmentConfig::default()
    };
    let enhanced = sequence_enhance(&window, &pool[1..], &aug, &mut rng);
    for (before, after) in window.frames.iter().zip(&enhanced.frames) {
        let extra = after.points.len() - before.points.len();
        let target = after.points.iter().filter(|p| point_in_box(p, &after.gt)).count();
        let far = after.points[before.points.len()..]
            .iter()
            .map(|p| dist(p, &after.gt.center))
            .fold(0.0, f64::max);
        println!(
            "t={}: +{extra} distractor points (farthest {far:.2} m from target), {target} points still on target",
            after.t
        );
    }
    Ok(())
}
