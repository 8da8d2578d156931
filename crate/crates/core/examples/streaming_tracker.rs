//! Frame-by-frame use of the tracker: the memory bank holds the last `n`
//! frames' features, so each step runs the backbone on one new frame only.

use streamtrack::data::generate_split;
use streamtrack::geom::{dist, giou_3d};
use streamtrack::harness::ExperimentConfig;
use streamtrack::memory::Tracker;
use streamtrack::model::Model;

fn main() -> streamtrack::Result<()> {
    let cfg = ExperimentConfig::desk();
    let model = Model::new(cfg.model.clone())?;
    // Untrained weights; see train_and_track for a useful model.
    let (params, _) = model.init(0)?;
    let tracker = Tracker::new(&model, &params, cfg.tracker.clone());

    let seq = &generate_split(&cfg.data.test_scene, 1, 5)?[0];
    let first = &seq.frames[0];
    let mut state = tracker.init_track(&first.points, &first.gt, first.t)?;
    for f in &seq.frames[1..] {
        let out = tracker.track_step(&mut state, &f.points, f.t)?;
        println!(
            "t={:>2} bank {:?} score {:.3} center error {:.2} m iou {:.2}",
            f.t,
            state.bank.timestamps(),
            out.score,
            dist(&out.box_world.center, &f.gt.center),
            giou_3d(&out.box_world, &f.gt).iou
        );
    }
    Ok(())
}
