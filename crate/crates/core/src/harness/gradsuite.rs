//! Finite-difference check of every differentiable operation, the composed
//! encoder and decoder layers, the backbone and the full training loss,
//! each over many seeded random instances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::loss::{window_loss_with, GtEmbed, LossWeights, PreparedWindow};
use super::train::sample_window;
use crate::backbone::BackboneConfig;
use crate::data::{generate_split, Tracklet};
use crate::decoder::{giou_op, Decoder, DecoderConfig};
use crate::encoder::{EncoderConfig, HybridLayer};
use crate::error::Result;
use crate::geom::{giou_3d, Box3D};
use crate::model::{Model, ModelConfig};
use crate::tensor::gradcheck::{check_fn, check_params, CheckReport, Probe};
use crate::tensor::{Binding, ParamStore, Tensor};

type Input = (Vec<f64>, Vec<usize>);

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Input {
    let n = shape.iter().product();
    ((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape.to_vec())
}

fn rand_in(rng: &mut impl Rng, shape: &[usize]) -> Input {
    uniform(rng, shape, -1.0, 1.0)
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut impl Rng, shape: &[usize]) -> Input {
    let (v, s) = uniform(rng, shape, 0.05, 1.0);
    (v.into_iter().map(|x| if rng.gen_bool(0.5) { x } else { -x }).collect(), s)
}

fn weights(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let (v, s) = rand_in(rng, shape);
    Tensor::new(v, &s).expect("shape matches data")
}

/// `Σ w ⊙ out` with fixed random weights, turning any output into a scalar.
fn readout(out: Result<Tensor>, w: &Tensor) -> Result<Tensor> {
    Ok(out?.mul(w)?.sum())
}

fn perturb(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    for (_, p) in store.iter_mut() {
        p.data.iter_mut().for_each(|v| *v += rng.gen_range(-scale..scale));
    }
}

/// One check instance, built from its own generator.
type Check = fn(&mut ChaCha8Rng) -> Result<CheckReport>;

macro_rules! unary {
    ($name:literal, $gen:ident, $shape:expr, $out:expr, |$x:ident| $body:expr) => {
        (
            $name,
            (|rng: &mut ChaCha8Rng| {
                let x = $gen(rng, &$shape);
                let w = weights(rng, &$out);
                check_fn(
                    $name,
                    |t| {
                        let $x = &t[0];
                        readout($body, &w)
                    },
                    &[x],
                    Probe::Coordinates,
                    rng,
                )
            }) as Check,
        )
    };
}

macro_rules! binary {
    ($name:literal, $sa:expr, $sb:expr, $out:expr, |$a:ident, $b:ident| $body:expr) => {
        (
            $name,
            (|rng: &mut ChaCha8Rng| {
                let a = rand_in(rng, &$sa);
                let b = rand_in(rng, &$sb);
                let w = weights(rng, &$out);
                check_fn(
                    $name,
                    |t| {
                        let ($a, $b) = (&t[0], &t[1]);
                        readout($body, &w)
                    },
                    &[a, b],
                    Probe::Coordinates,
                    rng,
                )
            }) as Check,
        )
    };
}

fn op_checks() -> Vec<(&'static str, Check)> {
    vec![
        binary!("add", [3, 4], [3, 4], [3, 4], |a, b| a.add(b)),
        binary!("sub", [3, 4], [3, 4], [3, 4], |a, b| a.sub(b)),
        binary!("mul", [3, 4], [3, 4], [3, 4], |a, b| a.mul(b)),
        binary!("add_bias", [3, 4], [4], [3, 4], |a, b| a.add_bias(b)),
        binary!("mul_bias", [3, 4], [4], [3, 4], |a, b| a.mul_bias(b)),
        binary!("matmul", [3, 4], [4, 2], [3, 2], |a, b| a.matmul(b)),
        binary!("concat0", [2, 3], [1, 3], [3, 3], |a, b| Tensor::concat(&[a, b], 0)),
        binary!("concat1", [2, 3], [2, 2], [2, 5], |a, b| Tensor::concat(&[a, b], 1)),
        unary!("scale", rand_in, [3, 4], [3, 4], |x| Ok(x.scale(-1.7))),
        unary!("add_scalar", rand_in, [3, 4], [3, 4], |x| Ok(x.add_scalar(0.3))),
        unary!("neg", rand_in, [3, 4], [3, 4], |x| Ok(x.neg())),
        unary!("exp", rand_in, [3, 4], [3, 4], |x| Ok(x.exp())),
        unary!("log", positive, [3, 4], [3, 4], |x| Ok(x.log())),
        unary!("relu", off_zero, [3, 4], [3, 4], |x| Ok(x.relu())),
        unary!("sigmoid", rand_in, [3, 4], [3, 4], |x| Ok(x.sigmoid())),
        unary!("transpose", rand_in, [3, 4], [4, 3], |x| x.transpose()),
        unary!("reshape", rand_in, [3, 4], [2, 6], |x| x.reshape(&[2, 6])),
        unary!("narrow", rand_in, [3, 4], [3, 2], |x| x.narrow(1, 1, 2)),
        unary!("gather_rows", rand_in, [3, 4], [4, 4], |x| x.gather_rows(&[2, 0, 2, 1])),
        unary!("sum", rand_in, [3, 4], [], |x| Ok(x.sum())),
        unary!("mean", rand_in, [3, 4], [], |x| Ok(x.mean())),
        unary!("sum_axis", rand_in, [3, 4], [4], |x| x.sum_axis(0)),
        unary!("max_axis", rand_in, [3, 4], [3], |x| x.max_axis(1)),
        unary!("softmax", rand_in, [3, 4], [3, 4], |x| x.softmax()),
        unary!("masked_softmax", rand_in, [3, 3], [3, 3], |x| x
            .masked_softmax(&[true, false, true, true, true, false, false, false, true])),
        unary!("log_softmax", rand_in, [3, 4], [3, 4], |x| x.log_softmax()),
        unary!("layer_norm", rand_in, [3, 4], [3, 4], |x| x.layer_norm(1e-5)),
        unary!("l2_normalize", rand_in, [3, 4], [3, 4], |x| x.l2_normalize(1e-12)),
        ("smooth_l1", |rng| {
            let x = rand_in(rng, &[3, 4]);
            let t: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w = weights(rng, &[3, 4]);
            check_fn("smooth_l1", |v| readout(v[0].smooth_l1(&t, 1.0), &w), &[x], Probe::Coordinates, rng)
        }),
        ("bce_with_logits", |rng| {
            let x = uniform(rng, &[6], -3.0, 3.0);
            let t: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
            let w = weights(rng, &[6]);
            check_fn(
                "bce_with_logits",
                |v| readout(v[0].bce_with_logits(&t), &w),
                &[x],
                Probe::Coordinates,
                rng,
            )
        }),
        ("sigmoid_focal", |rng| {
            let x = uniform(rng, &[6], -3.0, 3.0);
            let mut t = vec![0.0; 6];
            t[rng.gen_range(0..6)] = 1.0;
            let w = weights(rng, &[6]);
            check_fn(
                "sigmoid_focal",
                |v| readout(v[0].sigmoid_focal(&t, 0.25, 2.0), &w),
                &[x],
                Probe::Coordinates,
                rng,
            )
        }),
        ("giou", giou_check),
    ]
}

fn positive(rng: &mut impl Rng, shape: &[usize]) -> Input {
    uniform(rng, shape, 0.3, 2.0)
}

fn giou_check(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let size = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..4.0), rng.gen_range(0.5..2.0)];
    let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)];
    let gt = Box3D::new(
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)],
        size.map(|s| s * rng.gen_range(0.7..1.3)),
        rng.gen_range(-3.0..3.0),
    )?;
    // Mostly overlapping rows, so the intersection path is exercised.
    loop {
        let row = uniform(rng, &[1, 4], -1.0, 1.0);
        let b = Box3D::new([q[0] + row.0[0], q[1] + row.0[1], q[2] + row.0[2]], size, row.0[3])?;
        if giou_3d(&b, &gt).iou > 1e-3 || rng.gen_bool(0.3) {
            return check_fn("giou", |v| giou_op(&v[0], &q, &size, &gt), &[row], Probe::Coordinates, rng);
        }
    }
}

fn encoder_layer_check(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let (t, c) = (6, 8);
    let layer = HybridLayer::new("l", c, 2, 2, true);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    perturb(&mut store, rng, 0.1);
    let mask: Vec<bool> = (0..t * t).map(|i| i / t == i % t || rng.gen_bool(0.4)).collect();
    let inputs: Vec<Input> = (0..3).map(|_| rand_in(rng, &[t, c])).collect();
    let (wt, ws, wd) = (weights(rng, &[t, c]), weights(rng, &[t]), weights(rng, &[t, 9]));
    let read = |p: &Binding, x: &[Tensor]| -> Result<Tensor> {
        let o = layer.forward(p, &x[0], &x[1], &x[2], &mask)?;
        o.tokens.mul(&wt)?.sum().add(&o.s.mul(&ws)?.sum())?.add(&o.d.mul(&wd)?.sum())
    };
    let frozen = Binding::frozen(&store);
    let mut r = check_fn("encoder layer", |x| read(&frozen, x), &inputs, Probe::Directions(2), rng)?;
    let xs: Vec<Tensor> = inputs.iter().map(|(d, s)| Tensor::new(d.clone(), s)).collect::<Result<_>>()?;
    r.merge(&check_params("encoder layer", &store, |p| read(p, &xs), 1, rng)?);
    r.instances = 1;
    Ok(r)
}

fn decoder_layer_check(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let (q, m, c) = (5, 7, 8);
    let cfg = DecoderConfig {
        layers: 1,
        heads: 2,
        ..DecoderConfig::default()
    };
    let dec = Decoder::new("d", cfg, c)?;
    let mut store = ParamStore::new();
    dec.init(&mut store, rng)?;
    perturb(&mut store, rng, 0.1);
    let layer = &dec.layers[0];
    let mask: Vec<bool> = (0..q * q).map(|i| i / q == i % q || rng.gen_bool(0.5)).collect();
    let inputs = vec![
        rand_in(rng, &[q, c]),
        rand_in(rng, &[q, c]),
        rand_in(rng, &[m, c]),
        rand_in(rng, &[m, c]),
    ];
    let w = weights(rng, &[q, c]);
    let read = |p: &Binding, x: &[Tensor]| readout(layer.forward(p, &x[0], &x[1], &x[2], &x[3], Some(&mask)), &w);
    let frozen = Binding::frozen(&store);
    let mut r = check_fn("decoder layer", |x| read(&frozen, x), &inputs, Probe::Directions(2), rng)?;
    let xs: Vec<Tensor> = inputs.iter().map(|(d, s)| Tensor::new(d.clone(), s)).collect::<Result<_>>()?;
    r.merge(&check_params("decoder layer", &store, |p| read(p, &xs), 1, rng)?);
    r.instances = 1;
    Ok(r)
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        history: 2,
        backbone: BackboneConfig {
            input_points: 32,
            stage_points: vec![12, 6],
            radii: vec![0.5, 1.0],
            neighbor_cap: 6,
            channels: vec![8, 8],
        },
        encoder: EncoderConfig {
            layers: 1,
            radii: vec![1.0],
            heads: 2,
            neighbor_cap: 4,
            ..EncoderConfig::default()
        },
        decoder: DecoderConfig {
            layers: 2,
            heads: 2,
            ..DecoderConfig::default()
        },
    }
}

fn backbone_check(rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let model = Model::new(tiny_model())?;
    let (mut store, _) = model.init(rng.gen())?;
    perturb(&mut store, rng, 0.05);
    let pts: Vec<[f64; 3]> = (0..32)
        .map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-0.8..0.8)])
        .collect();
    let w = weights(rng, &[6, 8]);
    let store = store.subset(&["bb."]);
    check_params(
        "backbone",
        &store,
        |p| readout(Ok(model.backbone.extract(p, &pts)?.feats), &w),
        2,
        rng,
    )
}

/// Training-loss check on windows drawn from a small synthetic pool. The GT
/// embedding is computed once at the base point and then held fixed, which
/// is exactly what the analytic gradient assumes.
fn total_loss_check(rng: &mut ChaCha8Rng, pool: &[Tracklet]) -> Result<CheckReport> {
    let mut cfg = ExperimentConfig::desk();
    cfg.model = tiny_model();
    cfg.train.sequence_enhancement = true;
    cfg.augment.rho = 0.5;
    let model = Model::new(cfg.model.clone())?;
    let (mut live, mut momentum) = model.init(rng.gen())?;
    perturb(&mut live, rng, 0.05);
    perturb(&mut momentum, rng, 0.05);
    let w: PreparedWindow = sample_window(&cfg, pool, rng)?;
    let weights = LossWeights::default();
    let embed = {
        let p = Binding::frozen(&live);
        let m = Binding::frozen(&momentum);
        window_loss_with(&model, &p, GtEmbed::Momentum(&m), &w, &weights)?
            .gt_embed
            .expect("contrastive on")
    };
    check_params(
        "total loss",
        &live,
        |p| Ok(window_loss_with(&model, p, GtEmbed::Fixed(&embed), &w, &weights)?.total),
        1,
        rng,
    )
}

/// Names of all checks, in run order.
pub fn check_names() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = op_checks().into_iter().map(|(n, _)| n).collect();
    v.extend(["encoder layer", "decoder layer", "backbone", "total loss"]);
    v
}

/// Runs every check (or those whose name contains `filter`) on `instances`
/// random instances each. Returns one merged report per check.
pub fn run_suite(instances: usize, seed: u64, filter: Option<&str>) -> Result<Vec<CheckReport>> {
    let keep = |n: &str| filter.map_or(true, |f| n.contains(f));
    let mut checks: Vec<(&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Result<CheckReport>>)> = op_checks()
        .into_iter()
        .map(|(n, f)| (n, Box::new(f) as Box<dyn Fn(&mut ChaCha8Rng) -> Result<CheckReport>>))
        .collect();
    checks.push(("encoder layer", Box::new(encoder_layer_check)));
    checks.push(("decoder layer", Box::new(decoder_layer_check)));
    checks.push(("backbone", Box::new(backbone_check)));
    if keep("total loss") {
        let mut scene = ExperimentConfig::desk().data.train_scene;
        scene.frames = 5;
        scene.start_range = (4.0, 8.0);
        let pool = generate_split(&scene, 4, seed)?;
        checks.push(("total loss", Box::new(move |rng| total_loss_check(rng, &pool))));
    }
    let mut out = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        if !keep(name) {
            continue;
        }
        let start = Instant::now();
        let mut report = CheckReport::new(*name);
        for k in 0..instances {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64) << 32) ^ k as u64);
            let r = check(&mut rng)?;
            report.merge(&CheckReport { instances: 1, ..r });
        }
        log::info!(
            "{name}: {} instances, max rel err {:.2e} ({:.1}s)",
            report.instances,
            report.max_rel_err,
            start.elapsed().as_secs_f64()
        );
        out.push(report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_a_few_instances() {
        let reports = run_suite(3, 7, None).unwrap();
        assert_eq!(reports.len(), check_names().len());
        for r in &reports {
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.instances, 3);
        }
    }

    #[test]
    fn filter_selects_by_name() {
        let r = run_suite(1, 0, Some("softmax")).unwrap();
        let names: Vec<&str> = r.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["softmax", "masked_softmax", "log_softmax"]);
    }
}
