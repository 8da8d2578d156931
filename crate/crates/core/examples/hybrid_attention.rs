//! Local attention limits: an unbounded radius reduces to global attention
//! inside each frame, a tiny radius to each token's own value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamtrack::encoder::{local_neighbor_mask, MultiHeadAttention};
use streamtrack::geom::Point;
use streamtrack::tensor::{Binding, ParamStore, Tensor};

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn main() -> streamtrack::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (frames, k, dim) = (3, 8, 16);
    let t = frames * k;
    let attn = MultiHeadAttention::new("attn", dim, 2);
    let mut store = ParamStore::new();
    attn.init(&mut store, &mut rng)?;
    let p = Binding::frozen(&store);
    let coords: Vec<Point> = (0..t).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect();
    let x = Tensor::new((0..t * dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[t, dim])?;

    let block: Vec<bool> = (0..t * t).map(|ij| ij / t / k == ij % t / k).collect();
    let per_frame_global = attn.forward(&p, &x, &x, &x, Some(&block))?;
    for radius in [0.001, 0.3, 0.8, f64::INFINITY] {
        let mask = local_neighbor_mask(&coords, k, radius, t, false)?;
        let neighbors = mask.iter().filter(|m| **m).count() as f64 / t as f64;
        let local = attn.forward(&p, &x, &x, &x, Some(&mask))?;
        println!(
            "radius {radius:>6}: {neighbors:5.2} neighbors/token, distance to per-frame global {:.3e}",
            max_diff(&local, &per_frame_global)
        );
    }
    let own = attn.o.forward(&p, &attn.v.forward(&p, &x)?)?;
    let tiny = local_neighbor_mask(&coords, k, 1e-6, t, false)?;
    println!(
        "radius 1e-6 vs own value projection: {:.3e}",
        max_diff(&attn.forward(&p, &x, &x, &x, Some(&tiny))?, &own)
    );
    Ok(())
}
