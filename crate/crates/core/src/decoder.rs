//! Query-based box prediction.
//!
//! One query per sampled current-frame point attends to itself and to the
//! encoder tokens of all frames. After every decoder layer, shared heads
//! produce a class logit, a 4-DOF box (offset from the query point plus a
//! heading) and a projection embedding. Training matches a single positive
//! per layer and adds an InfoNCE term anchored by a ground-truth query that
//! runs through an exponential-moving-average copy of the decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{FeedForward, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::geom::{iou_terms, normalize_angle, Box3D, Dual, Enclosing, Point, Real, RealBox};
use crate::tensor::nn::{LayerNorm, Linear, Mlp};
use crate::tensor::{Binding, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Projection width for the contrastive embedding; 0 means the model width.
    pub proj_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 4,
            ffn_mult: 2,
            proj_dim: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || width % self.heads != 0 || self.ffn_mult == 0 {
            return Err(Error::Config(format!(
                "decoder: need layers ≥ 1 and width {width} divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    fn new(prefix: &str, dim: usize, heads: usize, ffn_mult: usize) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(&format!("{prefix}.self"), dim, heads),
            norm1: LayerNorm::new(&format!("{prefix}.norm1"), dim),
            cross_attn: MultiHeadAttention::new(&format!("{prefix}.cross"), dim, heads),
            norm2: LayerNorm::new(&format!("{prefix}.norm2"), dim),
            ffn: FeedForward::new(&format!("{prefix}.ffn"), dim, ffn_mult * dim),
            norm3: LayerNorm::new(&format!("{prefix}.norm3"), dim),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.self_attn.init(store, rng)?;
        self.norm1.init(store)?;
        self.cross_attn.init(store, rng)?;
        self.norm2.init(store)?;
        self.ffn.init(store, rng)?;
        self.norm3.init(store)
    }

    /// Post-norm layer. `self_mask` restricts which queries each query sees.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        p: &Binding,
        tgt: &Tensor,
        qpos: &Tensor,
        memory: &Tensor,
        mem_key: &Tensor,
        self_mask: Option<&[bool]>,
    ) -> Result<Tensor> {
        let q = tgt.add(qpos)?;
        let x = self
            .norm1
            .forward(p, &tgt.add(&self.self_attn.forward(p, &q, &q, tgt, self_mask)?)?)?;
        let ca = self.cross_attn.forward(p, &x.add(qpos)?, mem_key, memory, None)?;
        let x = self.norm2.forward(p, &x.add(&ca)?)?;
        self.norm3.forward(p, &x.add(&self.ffn.forward(p, &x)?)?)
    }
}

/// Head outputs of one decoder layer for the live queries.
#[derive(Debug, Clone)]
pub struct LayerPrediction {
    /// `[N']` class logits.
    pub logits: Tensor,
    /// `[N', 4]`: offset `o` (3) and heading `θ`.
    pub boxes: Tensor,
    /// `[N', D]` unit-norm projection embeddings.
    pub proj: Tensor,
}

#[derive(Debug, Clone)]
pub struct DecoderOutput {
    pub layers: Vec<LayerPrediction>,
    /// Per layer, the momentum-path embedding of the GT query (constant).
    pub gt_embed: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub query: Mlp,
    pub layers: Vec<DecoderLayer>,
    pub cls: Linear,
    pub reg: Mlp,
    pub proj: Mlp,
    prefix: String,
}

const NORM_EPS: f64 = 1e-12;

impl Decoder {
    pub fn new(prefix: &str, cfg: DecoderConfig, dim: usize) -> Result<Self> {
        cfg.validate(dim)?;
        let d = if cfg.proj_dim == 0 { dim } else { cfg.proj_dim };
        Ok(Self {
            query: Mlp::new(&format!("{prefix}.query"), &[3, dim, dim]),
            layers: (0..cfg.layers)
                .map(|i| DecoderLayer::new(&format!("{prefix}.layer{i}"), dim, cfg.heads, cfg.ffn_mult))
                .collect(),
            cls: Linear::new(&format!("{prefix}.cls"), dim, 1),
            reg: Mlp::new(&format!("{prefix}.reg"), &[dim, dim, 4]),
            proj: Mlp::new(&format!("{prefix}.proj"), &[dim, dim, d]),
            prefix: prefix.to_string(),
            cfg,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.query.init(store, rng)?;
        self.layers.iter().try_for_each(|l| l.init(store, rng))?;
        self.cls.init(store, rng)?;
        self.reg.init(store, rng)?;
        self.proj.init(store, rng)
    }

    /// Parameter-name prefixes covered by the momentum copy: decoder layers
    /// and the projection head.
    pub fn momentum_prefixes(&self) -> Vec<String> {
        vec![format!("{}.layer", self.prefix), format!("{}.proj", self.prefix)]
    }

    /// The momentum copy, initialised from the live parameters.
    pub fn momentum_from(&self, live: &ParamStore) -> ParamStore {
        let prefixes = self.momentum_prefixes();
        let refs: Vec<&str> = prefixes.iter().map(String::as_str).collect();
        live.subset(&refs)
    }

    /// Query embeddings from canonical coordinates, `[rows, C]`.
    pub fn make_queries(&self, p: &Binding, coords: &[Point]) -> Result<Tensor> {
        let x = Tensor::new(coords.iter().flatten().copied().collect(), &[coords.len(), 3])?;
        self.query.forward(p, &x)
    }

    fn heads(&self, p: &Binding, x: &Tensor) -> Result<LayerPrediction> {
        let n = x.shape()[0];
        Ok(LayerPrediction {
            logits: self.cls.forward(p, x)?.reshape(&[n])?,
            boxes: self.reg.forward(p, x)?,
            proj: self.proj.forward(p, x)?.l2_normalize(NORM_EPS)?,
        })
    }

    /// Runs all layers. With `gt` = `(momentum params, GT center)`, the GT
    /// query goes through the momentum copy on detached inputs.
    pub fn decode(
        &self,
        p: &Binding,
        query_coords: &[Point],
        memory: &Tensor,
        mem_pos: &Tensor,
        gt: Option<(&Binding, Point)>,
    ) -> Result<DecoderOutput> {
        let queries = self.make_queries(p, query_coords)?;
        let mem_key = memory.add(mem_pos)?;
        let mut tgt = queries.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            tgt = layer.forward(p, &tgt, &queries, memory, &mem_key, None)?;
            layers.push(self.heads(p, &tgt)?);
        }
        let gt_embed = match gt {
            Some((momentum, center)) => Some(self.momentum_embed(p, momentum, query_coords, center, memory, mem_pos)?),
            None => None,
        };
        Ok(DecoderOutput { layers, gt_embed })
    }

    /// Per-layer GT embedding `f_g`. Everything on this path is a constant:
    /// queries and memory are detached and the momentum weights are frozen.
    pub fn momentum_embed(
        &self,
        p: &Binding,
        momentum: &Binding,
        query_coords: &[Point],
        center: Point,
        memory: &Tensor,
        mem_pos: &Tensor,
    ) -> Result<Vec<Vec<f64>>> {
        let n = query_coords.len();
        let mut rows = query_coords.to_vec();
        rows.push(center);
        let qpos = self.make_queries(p, &rows)?.detach();
        let memory = memory.detach();
        let mem_key = memory.add(&mem_pos.detach())?;
        // Live rows never see the GT row; the GT row sees everything.
        let rows = n + 1;
        let mask: Vec<bool> = (0..rows * rows).map(|i| i / rows == n || i % rows != n).collect();
        let mut tgt = qpos.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            tgt = layer.forward(momentum, &tgt, &qpos, &memory, &mem_key, Some(&mask))?;
            let g = self.proj.forward(momentum, &tgt.narrow(0, n, 1)?)?.l2_normalize(NORM_EPS)?;
            out.push(g.to_vec());
        }
        Ok(out)
    }
}

/// Canonical-frame box of one query: center = query point + offset.
pub fn decode_box(query: &Point, row: &[f64], size: &[f64; 3]) -> Result<Box3D> {
    Box3D::new([query[0] + row[0], query[1] + row[1], query[2] + row[2]], *size, row[3])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchWeights {
    pub cls: f64,
    pub giou: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self { cls: 0.1, giou: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub positive: usize,
    /// One-hot classification targets.
    pub targets: Vec<f64>,
    pub costs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Cost `−λ_cls·σ(c) − λ_giou·GIoU(b, b̂)` of every query; the positive is
/// the minimum, lowest index on ties.
pub fn match_queries(
    logits: &[f64],
    boxes: &[f64],
    query_coords: &[Point],
    size: &[f64; 3],
    gt: &Box3D,
    w: &MatchWeights,
) -> Result<MatchResult> {
    let n = logits.len();
    if boxes.len() != 4 * n || query_coords.len() != n || n == 0 {
        return Err(Error::shape("match_queries", &[n, 4], &[boxes.len() / 4, query_coords.len()]));
    }
    let mut costs = Vec::with_capacity(n);
    for i in 0..n {
        let b = decode_box(&query_coords[i], &boxes[4 * i..4 * i + 4], size)?;
        let g = iou_terms(&RealBox::from(&b), &RealBox::from(gt), Enclosing::default()).giou;
        costs.push(-w.cls * sigmoid(logits[i]) - w.giou * g);
    }
    let mut positive = 0;
    for i in 1..n {
        if costs[i] < costs[positive] {
            positive = i;
        }
    }
    let mut targets = vec![0.0; n];
    targets[positive] = 1.0;
    Ok(MatchResult { positive, targets, costs })
}

/// GIoU between the box encoded by a `[1, 4]` row and a constant GT box, as
/// a differentiable scalar.
pub fn giou_op(row: &Tensor, query: &Point, size: &[f64; 3], gt: &Box3D) -> Result<Tensor> {
    if row.shape() != [1, 4] {
        return Err(Error::shape("giou_op", row.shape(), &[1, 4]));
    }
    let r = row.data();
    let pred = RealBox {
        center: [0, 1, 2].map(|k| Dual::<4>::var(query[k] + r[k], k)),
        size: size.map(<Dual<4> as Real>::cst),
        heading: Dual::var(r[3], 3),
    };
    let g = iou_terms(&pred, &RealBox::constant(gt), Enclosing::default()).giou;
    let d = g.d;
    Ok(Tensor::from_op(
        "giou",
        vec![g.v],
        vec![],
        vec![row.clone()],
        Box::new(move |grad, _| vec![Some(d.iter().map(|v| v * grad[0]).collect())]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxLossWeights {
    pub cls: f64,
    pub reg: f64,
    pub offset: f64,
    pub theta: f64,
    pub giou: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

impl Default for BoxLossWeights {
    fn default() -> Self {
        Self {
            cls: 0.1,
            reg: 1.0,
            offset: 1.0,
            theta: 5.0,
            giou: 0.25,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
        }
    }
}

/// Loss of one layer given its match.
pub fn layer_box_loss(
    pred: &LayerPrediction,
    m: &MatchResult,
    query_coords: &[Point],
    size: &[f64; 3],
    gt: &Box3D,
    w: &BoxLossWeights,
) -> Result<Tensor> {
    let focal = pred.logits.sigmoid_focal(&m.targets, w.focal_alpha, w.focal_gamma)?.sum();
    let q = query_coords[m.positive];
    let row = pred.boxes.narrow(0, m.positive, 1)?;
    let offset_target = [gt.center[0] - q[0], gt.center[1] - q[1], gt.center[2] - q[2]];
    let offset = row.narrow(1, 0, 3)?.smooth_l1(&offset_target, 1.0)?.mean();
    let theta = row.narrow(1, 3, 1)?.smooth_l1(&[normalize_angle(gt.heading)], 1.0)?.mean();
    let giou = giou_op(&row, &q, size, gt)?;
    let reg = offset
        .scale(w.offset)
        .add(&theta.scale(w.theta))?
        .add(&giou.neg().add_scalar(1.0).scale(w.giou))?;
    focal.scale(w.cls).add(&reg.scale(w.reg))
}

/// Per-layer matching followed by the summed box loss. `gt` is in the same
/// canonical frame as the query coordinates.
pub fn box_loss(
    layers: &[LayerPrediction],
    query_coords: &[Point],
    size: &[f64; 3],
    gt: &Box3D,
    mw: &MatchWeights,
    w: &BoxLossWeights,
) -> Result<(Tensor, Vec<MatchResult>)> {
    let mut total = Tensor::scalar(0.0);
    let mut matches = Vec::with_capacity(layers.len());
    for pred in layers {
        let m = match_queries(pred.logits.data(), pred.boxes.data(), query_coords, size, gt, mw)?;
        total = total.add(&layer_box_loss(pred, &m, query_coords, size, gt, w)?)?;
        matches.push(m);
    }
    Ok((total, matches))
}

/// `Σ_l −log softmax_i(f_g · f_i / τ)[positive_l]`; gradients reach only
/// the live projections.
pub fn infonce_loss(layers: &[LayerPrediction], gt_embed: &[Vec<f64>], matches: &[MatchResult], tau: f64) -> Result<Tensor> {
    if layers.len() != gt_embed.len() || layers.len() != matches.len() {
        return Err(Error::shape("infonce_loss", &[layers.len()], &[gt_embed.len(), matches.len()]));
    }
    let mut total = Tensor::scalar(0.0);
    for ((pred, g), m) in layers.iter().zip(gt_embed).zip(matches) {
        let n = pred.proj.shape()[0];
        let fg = Tensor::new(g.clone(), &[g.len(), 1])?;
        let logits = pred.proj.matmul(&fg)?.reshape(&[n])?.scale(1.0 / tau);
        let lp = logits.log_softmax()?.narrow(0, m.positive, 1)?.sum();
        total = total.sub(&lp)?;
    }
    Ok(total)
}

/// `θ_m ← m·θ_m + (1 − m)·θ_live` for every momentum parameter.
pub fn momentum_update(live: &ParamStore, momentum: &mut ParamStore, m: f64) -> Result<()> {
    for (name, slot) in momentum.iter_mut() {
        let src = live.get(name).ok_or_else(|| Error::UnknownParam(name.clone()))?;
        if src.shape != slot.shape {
            return Err(Error::shape("momentum_update", &slot.shape, &src.shape));
        }
        for (t, s) in slot.data.iter_mut().zip(&src.data) {
            *t = m * *t + (1.0 - m) * s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_fn, check_params, Probe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SIZE: [f64; 3] = [0.8, 1.8, 1.5];

    fn setup(seed: u64) -> (Decoder, ParamStore, ParamStore) {
        let cfg = DecoderConfig {
            layers: 2,
            heads: 2,
            ..DecoderConfig::default()
        };
        let d = Decoder::new("dec", cfg, 8).unwrap();
        let mut store = ParamStore::new();
        d.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mom = d.momentum_from(&store);
        (d, store, mom)
    }

    fn rand_t(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        Tensor::new((0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn coords(rng: &mut impl Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-0.5..0.5)])
            .collect()
    }

    #[test]
    fn arities_and_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (d, store, mom) = setup(1);
        let p = Binding::frozen(&store);
        let mut qc = coords(&mut rng, 5);
        qc[1] = qc[0];
        let q = d.make_queries(&p, &qc).unwrap();
        assert_eq!(q.data()[..8], q.data()[8..16]);
        let g = d.make_queries(&p, &[qc[2]]).unwrap();
        assert_eq!(g.data(), &q.data()[16..24]);

        let mem = rand_t(&mut rng, &[12, 8]);
        let pos = rand_t(&mut rng, &[12, 8]);
        let m = Binding::frozen(&mom);
        let out = d.decode(&p, &qc, &mem, &pos, Some((&m, [0.1, 0.2, 0.0]))).unwrap();
        assert_eq!(out.layers.len(), 2);
        for l in &out.layers {
            assert_eq!(l.logits.shape(), &[5]);
            assert_eq!(l.boxes.shape(), &[5, 4]);
            for row in l.proj.data().chunks(8) {
                assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(out.gt_embed.as_ref().unwrap().len(), 2);
    }

    #[test]
    fn gt_query_does_not_touch_live_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (d, store, mom) = setup(2);
        let p = Binding::frozen(&store);
        let qc = coords(&mut rng, 6);
        let mem = rand_t(&mut rng, &[18, 8]);
        let pos = rand_t(&mut rng, &[18, 8]);
        let m = Binding::frozen(&mom);
        let with = d.decode(&p, &qc, &mem, &pos, Some((&m, [0.0; 3]))).unwrap();
        let without = d.decode(&p, &qc, &mem, &pos, None).unwrap();
        for (a, b) in with.layers.iter().zip(&without.layers) {
            assert_eq!(a.logits.data(), b.logits.data());
            assert_eq!(a.boxes.data(), b.boxes.data());
        }
    }

    fn gt() -> Box3D {
        Box3D::new([0.2, -0.1, 0.0], SIZE, 0.1).unwrap()
    }

    #[test]
    fn match_fixtures() {
        let qc = vec![[0.0; 3], [0.0; 3]];
        let boxes = vec![0.2, -0.1, 0.0, 0.3, 0.2, -0.1, 0.0, 0.3];
        let w = MatchWeights::default();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let m = match_queries(&[logit(0.9), logit(0.1)], &boxes, &qc, &SIZE, &gt(), &w).unwrap();
        assert_eq!(m.positive, 0);
        assert_eq!(m.targets, vec![1.0, 0.0]);
        let boxes = vec![0.5, 0.4, 0.0, 0.3, 0.2, -0.1, 0.0, 0.1];
        let m = match_queries(&[0.0, 0.0], &boxes, &qc, &SIZE, &gt(), &w).unwrap();
        assert_eq!(m.positive, 1);
        let m = match_queries(&[0.0, 0.0], &[0.0; 8], &qc, &SIZE, &gt(), &w).unwrap();
        assert_eq!(m.positive, 0);
    }

    #[test]
    fn match_equals_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let qc = coords(&mut rng, n);
            let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let boxes: Vec<f64> = (0..4 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = match_queries(&logits, &boxes, &qc, &SIZE, &gt(), &MatchWeights::default()).unwrap();
            let cost = |i: usize| {
                let b = decode_box(&qc[i], &boxes[4 * i..4 * i + 4], &SIZE).unwrap();
                -0.1 / (1.0 + (-logits[i]).exp()) - 0.25 * crate::geom::giou_3d(&b, &gt()).giou
            };
            let best = (0..n).fold(0, |b, i| if cost(i) < cost(b) { i } else { b });
            assert_eq!(m.positive, best);
        }
    }

    #[test]
    fn perfect_positive_has_near_zero_loss() {
        let g = gt();
        let qc = vec![[0.0; 3], [1.0, 1.0, 0.0]];
        let pred = LayerPrediction {
            logits: Tensor::new(vec![40.0, -40.0], &[2]).unwrap(),
            boxes: Tensor::new(vec![0.2, -0.1, 0.0, 0.1, 0.0, 0.0, 0.0, 0.0], &[2, 4]).unwrap(),
            proj: Tensor::zeros(&[2, 4]),
        };
        let (l, m) = box_loss(&[pred], &qc, &SIZE, &g, &MatchWeights::default(), &BoxLossWeights::default()).unwrap();
        assert_eq!(m[0].positive, 0);
        assert!(l.item().abs() < 1e-12, "{}", l.item());
    }

    #[test]
    fn regression_gradient_only_on_positive_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qc = coords(&mut rng, 5);
        let boxes = Tensor::param((0..20).map(|_| rng.gen_range(-0.5..0.5)).collect(), &[5, 4]).unwrap();
        let pred = LayerPrediction {
            logits: Tensor::new(vec![0.0; 5], &[5]).unwrap(),
            boxes: boxes.clone(),
            proj: Tensor::zeros(&[5, 4]),
        };
        let (l, m) = box_loss(&[pred], &qc, &SIZE, &gt(), &MatchWeights::default(), &BoxLossWeights::default()).unwrap();
        l.backward().unwrap();
        let g = boxes.grad().unwrap();
        for (i, row) in g.chunks(4).enumerate() {
            if i == m[0].positive {
                assert!(row.iter().any(|v| *v != 0.0));
            } else {
                assert!(row.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn giou_op_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = [0.1, -0.2, 0.05];
        let g = gt();
        for _ in 0..10 {
            let row: Vec<f64> = vec![
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.5..0.5),
            ];
            let r = check_fn(
                "giou",
                |x| giou_op(&x[0], &q, &SIZE, &g),
                &[(row, vec![1, 4])],
                Probe::Coordinates,
                &mut rng,
            )
            .unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn infonce_fixtures() {
        let pos = MatchResult {
            positive: 2,
            targets: vec![],
            costs: vec![],
        };
        let uniform = LayerPrediction {
            logits: Tensor::zeros(&[128]),
            boxes: Tensor::zeros(&[128, 4]),
            proj: Tensor::new([1.0, 0.0].repeat(128), &[128, 2]).unwrap(),
        };
        let l = infonce_loss(&[uniform], &[vec![0.0, 1.0]], &[pos.clone()], 1.0).unwrap();
        assert!((l.item() - 128f64.ln()).abs() < 1e-9);

        let mut proj = vec![0.0; 8];
        proj[2 * 2] = 1.0;
        let sharp = LayerPrediction {
            logits: Tensor::zeros(&[4]),
            boxes: Tensor::zeros(&[4, 4]),
            proj: Tensor::new(proj, &[4, 2]).unwrap(),
        };
        let l = infonce_loss(&[sharp], &[vec![80.0, 0.0]], &[pos.clone()], 1.0).unwrap();
        assert!(l.item() < 1e-20);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = rand_t(&mut rng, &[4, 3]);
        let g = vec![0.3, -0.7, 0.2];
        let pred = LayerPrediction {
            logits: Tensor::zeros(&[4]),
            boxes: Tensor::zeros(&[4, 4]),
            proj: f.clone(),
        };
        let l = infonce_loss(&[pred], &[g.clone()], &[pos], 0.5).unwrap();
        let dots: Vec<f64> = f
            .data()
            .chunks(3)
            .map(|r| r.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / 0.5)
            .collect();
        let lse = dots.iter().map(|d| d.exp()).sum::<f64>().ln();
        assert!((l.item() - (lse - dots[2])).abs() < 1e-12);
    }

    #[test]
    fn ema_fixtures() {
        let mut live = ParamStore::new();
        live.insert("w", &[2], vec![1.0, 1.0]).unwrap();
        let mut mom = ParamStore::new();
        mom.insert("w", &[2], vec![0.0, 0.0]).unwrap();
        momentum_update(&live, &mut mom, 0.99).unwrap();
        assert!((mom.get("w").unwrap().data[0] - 0.01).abs() < 1e-15);
        for _ in 1..50 {
            momentum_update(&live, &mut mom, 0.99).unwrap();
        }
        assert!((mom.get("w").unwrap().data[0] - (1.0 - 0.99f64.powi(50))).abs() < 1e-12);
        let before = mom.clone();
        momentum_update(&live, &mut mom, 1.0).unwrap();
        assert_eq!(before, mom);
        let mut bad = ParamStore::new();
        bad.insert("w", &[3], vec![0.0; 3]).unwrap();
        assert!(momentum_update(&live, &mut bad, 0.5).is_err());
    }

    #[test]
    fn momentum_params_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (d, store, mom) = setup(7);
        let qc = coords(&mut rng, 4);
        let mem = rand_t(&mut rng, &[8, 8]);
        let pos = rand_t(&mut rng, &[8, 8]);
        let live = Binding::trainable(&store);
        let m = Binding::trainable(&mom);
        let out = d.decode(&live, &qc, &mem, &pos, Some((&m, [0.1, 0.0, 0.0]))).unwrap();
        let (bl, matches) = box_loss(&out.layers, &qc, &SIZE, &gt(), &MatchWeights::default(), &BoxLossWeights::default()).unwrap();
        let nce = infonce_loss(&out.layers, out.gt_embed.as_ref().unwrap(), &matches, 1.0).unwrap();
        bl.add(&nce).unwrap().backward().unwrap();
        assert!(m.grads().is_empty());
        assert!(!live.grads().is_empty());
    }

    #[test]
    fn decoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (d, store, mom) = setup(8);
        let qc = coords(&mut rng, 4);
        let mem = rand_t(&mut rng, &[8, 8]);
        let pos = rand_t(&mut rng, &[8, 8]);
        let m = Binding::frozen(&mom);
        let g = gt();
        // The GT embedding is a stop-gradient target: hold it fixed while probing.
        let fg = d
            .momentum_embed(&Binding::frozen(&store), &m, &qc, [0.1, 0.0, 0.0], &mem, &pos)
            .unwrap();
        let loss = |p: &Binding, mem: &Tensor| -> Result<Tensor> {
            let out = d.decode(p, &qc, mem, &pos, None)?;
            let (bl, matches) = box_loss(&out.layers, &qc, &SIZE, &g, &MatchWeights::default(), &BoxLossWeights::default())?;
            bl.add(&infonce_loss(&out.layers, &fg, &matches, 1.0)?)
        };
        let r = check_params("decoder", &store, |p| loss(p, &mem), 2, &mut rng).unwrap();
        assert!(r.passed(), "{r:?}");
        let frozen = Binding::frozen(&store);
        let r = check_fn(
            "decoder memory",
            |x| loss(&frozen, &x[0]),
            &[(mem.to_vec(), vec![8, 8])],
            Probe::Directions(4),
            &mut rng,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
