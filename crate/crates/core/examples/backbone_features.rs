//! Runs the set-abstraction backbone on a cropped frame and shows that the
//! features do not change when the whole cloud is translated.

use streamtrack::backbone::Backbone;
use streamtrack::data::generate_split;
use streamtrack::geom::canonicalize;
use streamtrack::harness::ExperimentConfig;
use streamtrack::memory::prepare_frame;
use streamtrack::model::Model;
use streamtrack::tensor::Binding;

fn main() -> streamtrack::Result<()> {
    let cfg = ExperimentConfig::desk();
    let model = Model::new(cfg.model.clone())?;
    let (params, _) = model.init(0)?;
    let bb: &Backbone = &model.backbone;
    let p = Binding::frozen(&params);

    let t = &generate_split(&cfg.data.test_scene, 1, 3)?[0];
    let f = &t.frames[1];
    let reference = t.frames[0].gt;
    let pts = prepare_frame(&f.points, &reference, cfg.model.backbone.input_points, &cfg.tracker, f.t).expect("points near the target");
    let local = canonicalize(&pts, &reference);
    let a = bb.extract(&p, &local)?;
    println!(
        "{} input points -> {} tokens x {} channels",
        local.len(),
        a.coords.len(),
        a.feats.shape()[1]
    );

    let shifted: Vec<_> = local.iter().map(|q| [q[0] + 123.4, q[1] - 56.7, q[2] + 8.9]).collect();
    let b = bb.extract(&p, &shifted)?;
    let diff = a
        .feats
        .data()
        .iter()
        .zip(b.feats.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    println!("max feature change under translation: {diff:.2e}");
    Ok(())
}
