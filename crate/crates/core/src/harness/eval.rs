//! One Pass Evaluation: Success (mean IoU) and Precision (center-distance
//! AUC over 0–2 m).

use serde::{Deserialize, Serialize};

use crate::data::Tracklet;
use crate::error::{Error, Result};
use crate::geom::{dist, giou_3d, Box3D};
use crate::memory::Tracker;

/// Distance range of the precision curve (m).
pub const PRECISION_RANGE: f64 = 2.0;
const GRID_STEPS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub id: u64,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    pub ious: Vec<f64>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    pub sequences: Vec<SequenceReport>,
}

/// `100 · (1/2) · ∫₀² fraction(d ≤ τ) dτ`, trapezoid rule on a 0.01 m grid.
pub fn precision_auc(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let n = distances.len() as f64;
    let frac = |k: usize| {
        let tau = k as f64 * PRECISION_RANGE / GRID_STEPS as f64;
        distances.iter().filter(|d| **d <= tau).count() as f64 / n
    };
    // Area in grid-cell units, so a perfect curve gives exactly 100.
    let cells: f64 = 0.5 * (frac(0) + frac(GRID_STEPS)) + (1..GRID_STEPS).map(frac).sum::<f64>();
    100.0 * cells / GRID_STEPS as f64
}

/// Per-frame IoU and center distance of a predicted trajectory.
pub fn sequence_metrics(id: u64, pred: &[Box3D], gt: &[Box3D]) -> Result<SequenceReport> {
    if pred.len() != gt.len() {
        return Err(Error::Mismatch(format!(
            "sequence {id}: {} predictions for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| giou_3d(p, g).iou).collect();
    let distances: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| dist(&p.center, &g.center)).collect();
    let success = if ious.is_empty() {
        0.0
    } else {
        100.0 * ious.iter().sum::<f64>() / ious.len() as f64
    };
    Ok(SequenceReport {
        id,
        frames: ious.len(),
        success,
        precision: precision_auc(&distances),
        ious,
        distances,
    })
}

/// Frame-weighted aggregate of per-sequence reports.
pub fn aggregate(sequences: Vec<SequenceReport>) -> EvalReport {
    let frames: usize = sequences.iter().map(|s| s.frames).sum();
    let weighted = |f: fn(&SequenceReport) -> f64| {
        if frames == 0 {
            0.0
        } else {
            sequences.iter().map(|s| f(s) * s.frames as f64).sum::<f64>() / frames as f64
        }
    };
    EvalReport {
        frames,
        success: weighted(|s| s.success),
        precision: weighted(|s| s.precision),
        sequences,
    }
}

/// Tracks every tracklet from its frame-0 GT without re-initialisation.
/// Frame 0 counts as a (perfect) frame.
pub fn ope_evaluate(tracker: &Tracker, tracklets: &[Tracklet]) -> Result<EvalReport> {
    let mut seqs = Vec::with_capacity(tracklets.len());
    for t in tracklets {
        let out = tracker.run(&t.stream(), &t.frames[0].gt)?;
        let pred: Vec<Box3D> = out.iter().map(|s| s.box_world).collect();
        seqs.push(sequence_metrics(t.id, &pred, &t.gt_boxes())?);
    }
    Ok(aggregate(seqs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RigidTransform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_box(rng: &mut impl Rng) -> Box3D {
        Box3D::new(
            [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)],
            [rng.gen_range(0.5..2.0), rng.gen_range(0.5..4.0), rng.gen_range(0.5..2.0)],
            rng.gen_range(-3.0..3.0),
        )
        .unwrap()
    }

    #[test]
    fn perfect_tracking_scores_100() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt: Vec<Box3D> = (0..10).map(|_| rand_box(&mut rng)).collect();
        let r = sequence_metrics(0, &gt, &gt).unwrap();
        assert_eq!(r.success, 100.0);
        assert_eq!(r.precision, 100.0);
    }

    #[test]
    fn half_overlap_fixture_gives_75() {
        let g = Box3D::new([0.0; 3], [2.0, 2.0, 2.0], 0.0).unwrap();
        // Shifted by half its length along x: IoU = 1/3. Stretch instead so
        // the overlap is exactly half the union.
        let half = Box3D::new([0.0, 0.0, -0.5], [2.0, 2.0, 1.0], 0.0).unwrap();
        assert!((giou_3d(&half, &g).iou - 0.5).abs() < 1e-12);
        let r = sequence_metrics(0, &[g, half], &[g, g]).unwrap();
        assert!((r.success - 75.0).abs() < 1e-9);
    }

    #[test]
    fn two_meter_error_has_near_zero_precision() {
        let p = precision_auc(&[2.0; 5]);
        assert!(p < 0.3, "{p}");
        assert_eq!(precision_auc(&[2.5]), 0.0);
    }

    #[test]
    fn precision_matches_closed_form() {
        // Constant error d on [0, 2]: fraction is the step 1[τ ≥ d], so the
        // area is 2 − d up to half a grid cell.
        for d in [0.25, 0.5, 1.0, 1.5] {
            let p = precision_auc(&[d]);
            assert!((p - 100.0 * (2.0 - d) / 2.0).abs() <= 100.0 * 0.005 / 2.0 + 1e-9);
        }
    }

    #[test]
    fn invariant_under_joint_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let gt: Vec<Box3D> = (0..8).map(|_| rand_box(&mut rng)).collect();
            let pred: Vec<Box3D> = gt
                .iter()
                .map(|g| {
                    let mut b = *g;
                    b.center[0] += rng.gen_range(-0.6..0.6);
                    b.center[1] += rng.gen_range(-0.6..0.6);
                    b.heading += rng.gen_range(-0.3..0.3);
                    b
                })
                .collect();
            let t = RigidTransform::new(rng.gen_range(-3.0..3.0), [rng.gen_range(-50.0..50.0), 7.0, -2.0]);
            let a = sequence_metrics(0, &pred, &gt).unwrap();
            let tp: Vec<Box3D> = pred.iter().map(|b| b.transformed(&t)).collect();
            let tg: Vec<Box3D> = gt.iter().map(|b| b.transformed(&t)).collect();
            let b = sequence_metrics(0, &tp, &tg).unwrap();
            assert!((a.success - b.success).abs() < 1e-9);
            assert!((a.precision - b.precision).abs() < 1e-9);
        }
    }

    #[test]
    fn aggregate_is_frame_weighted() {
        let g = Box3D::new([0.0; 3], [1.0; 3], 0.0).unwrap();
        let far = Box3D::new([9.0, 0.0, 0.0], [1.0; 3], 0.0).unwrap();
        let a = sequence_metrics(0, &[g, g, g], &[g, g, g]).unwrap();
        let b = sequence_metrics(1, &[far], &[g]).unwrap();
        let r = aggregate(vec![a, b]);
        assert_eq!(r.frames, 4);
        assert!((r.success - 75.0).abs() < 1e-9);
        assert!((r.precision - 75.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let g = Box3D::new([0.0; 3], [1.0; 3], 0.0).unwrap();
        assert!(sequence_metrics(0, &[g], &[g, g]).is_err());
    }
}
