//! Success and Precision on hand-made trajectories.

use streamtrack::geom::Box3D;
use streamtrack::harness::{aggregate, sequence_metrics};

fn main() -> streamtrack::Result<()> {
    let gt: Vec<Box3D> = (0..10)
        .map(|i| Box3D::new([i as f64, 0.0, 0.0], [1.8, 4.0, 1.5], 0.0))
        .collect::<Result<_, _>>()?;
    let lagging: Vec<Box3D> = gt
        .iter()
        .map(|b| Box3D::new([b.center[0] - 0.4, 0.0, 0.0], b.size, 0.0))
        .collect::<Result<_, _>>()?;
    let stuck: Vec<Box3D> = vec![gt[0]; gt.len()];

    let runs = [("perfect", gt.clone()), ("lagging 0.4 m", lagging), ("never moves", stuck)];
    let mut all = Vec::new();
    for (i, (name, pred)) in runs.into_iter().enumerate() {
        let r = sequence_metrics(i as u64, &pred, &gt)?;
        println!("{name:>14}: success {:6.2}  precision {:6.2}", r.success, r.precision);
        all.push(r);
    }
    let total = aggregate(all);
    println!(
        "{:>14}: success {:6.2}  precision {:6.2} over {} frames",
        "all", total.success, total.precision, total.frames
    );
    Ok(())
}
