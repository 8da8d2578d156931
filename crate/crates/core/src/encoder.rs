//! Spatial-temporal encoder.
//!
//! Tokens are the backbone features of the current and past frames. Query
//! and key get a position embedding (MLP of the shared canonical coordinates
//! plus a learned per-frame table), the value gets a box-aware mask
//! embedding (MLP of the objectiveness/distance vector `M′`). Every layer
//! runs global attention over all tokens and local attention over each
//! token's spatial neighbors side by side, merges the two, and predicts
//! per-token objectiveness and box distances for point supervision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{ball_query, box_aware_distances, point_in_box, Box3D, Point};
use crate::memory::StreamInput;
use crate::tensor::nn::{LayerNorm, Linear, Mlp};
use crate::tensor::{Binding, ParamStore, Tensor};

/// Length of a token's box-aware mask vector: objectiveness + 9 distances.
pub const MASK_DIM: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    /// Local-attention radius per layer, meters.
    pub radii: Vec<f64>,
    pub heads: usize,
    pub neighbor_cap: usize,
    pub ffn_mult: usize,
    /// Run the local branch next to global attention. Off gives plain
    /// global attention.
    pub hybrid: bool,
    /// Allow local neighborhoods to span frames.
    pub cross_frame_local: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            radii: vec![0.6, 1.0, 1.5],
            heads: 4,
            neighbor_cap: 16,
            ffn_mult: 2,
            hybrid: true,
            cross_frame_local: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self, width: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("encoder: {msg}")));
        if self.layers == 0 || self.radii.len() != self.layers {
            return bad(format!(
                "need one radius per layer ({} layers, {} radii)",
                self.layers,
                self.radii.len()
            ));
        }
        if self.heads == 0 || width % self.heads != 0 {
            return bad(format!("width {width} is not divisible by {} heads", self.heads));
        }
        if self.neighbor_cap == 0 || self.ffn_mult == 0 || self.radii.iter().any(|r| !(*r > 0.0)) {
            return bad("neighbor_cap, ffn_mult and radii must be positive".into());
        }
        Ok(())
    }
}

/// Box-aware point mask: per token, objectiveness `m` and 9 distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMask {
    pub m: Vec<f64>,
    pub dist: Vec<[f64; 9]>,
}

impl PointMask {
    /// Row-major `T × 10` matrix `[m, d_0, …, d_8]`.
    pub fn features(&self) -> Result<Tensor> {
        let data = self
            .m
            .iter()
            .zip(&self.dist)
            .flat_map(|(m, d)| std::iter::once(*m).chain(d.iter().copied()))
            .collect();
        Tensor::new(data, &[self.m.len(), MASK_DIM])
    }
}

/// Historical tokens get `m ∈ {0, 1}` and distances to their own frame's
/// box (world frame); current-frame tokens get `m = 0.5` and zeros.
pub fn build_point_mask(input: &StreamInput) -> PointMask {
    let mut m = Vec::with_capacity(input.len());
    let mut dist = Vec::with_capacity(input.len());
    for (frame, b) in input.frame_boxes.iter().enumerate() {
        let range = frame * input.tokens_per_frame..(frame + 1) * input.tokens_per_frame;
        let pts = &input.coords_world[range];
        match b {
            None => {
                m.extend(std::iter::repeat(0.5).take(pts.len()));
                dist.extend(std::iter::repeat([0.0; 9]).take(pts.len()));
            }
            Some(b) => {
                m.extend(pts.iter().map(|p| if point_in_box(p, b) { 1.0 } else { 0.0 }));
                dist.extend(box_aware_distances(pts, b));
            }
        }
    }
    PointMask { m, dist }
}

/// Point-supervision targets for every token against its own frame's GT box.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTargets {
    pub s: Vec<f64>,
    pub d: Vec<[f64; 9]>,
}

/// `gt_world[i]` is the GT box of temporal index `i`.
pub fn point_targets(input: &StreamInput, gt_world: &[Box3D]) -> Result<PointTargets> {
    if gt_world.len() != input.frames() {
        return Err(Error::shape("point_targets", &[input.frames()], &[gt_world.len()]));
    }
    let mut s = Vec::with_capacity(input.len());
    let mut d = Vec::with_capacity(input.len());
    for (frame, b) in gt_world.iter().enumerate() {
        let pts = &input.coords_world[frame * input.tokens_per_frame..(frame + 1) * input.tokens_per_frame];
        s.extend(pts.iter().map(|p| if point_in_box(p, b) { 1.0 } else { 0.0 }));
        d.extend(box_aware_distances(pts, b));
    }
    Ok(PointTargets { s, d })
}

/// Admission mask (`T × T`, row = query) of each token's neighbors within
/// `radius`, nearest first up to `cap`. Neighborhoods stay inside a frame
/// unless `cross_frame` is set.
pub fn local_neighbor_mask(coords: &[Point], tokens_per_frame: usize, radius: f64, cap: usize, cross_frame: bool) -> Result<Vec<bool>> {
    let t = coords.len();
    let mut mask = vec![false; t * t];
    let block = if cross_frame { t } else { tokens_per_frame };
    for start in (0..t).step_by(block) {
        let pts = &coords[start..start + block];
        for (i, nb) in ball_query(pts, pts, radius, cap)?.into_iter().enumerate() {
            for j in nb {
                mask[(start + i) * t + start + j] = true;
            }
        }
    }
    Ok(mask)
}

/// Multi-head scaled dot-product attention with its own Q/K/V/O projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(&format!("{prefix}.q"), dim, dim),
            k: Linear::new(&format!("{prefix}.k"), dim, dim),
            v: Linear::new(&format!("{prefix}.v"), dim, dim),
            o: Linear::new(&format!("{prefix}.o"), dim, dim),
            heads,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.init(store, rng)?;
        }
        Ok(())
    }

    /// `q_in` is `Tq × C`; `k_in`, `v_in` are `Tk × C`; `mask` (if any) is
    /// `Tq × Tk`.
    pub fn forward(&self, p: &Binding, q_in: &Tensor, k_in: &Tensor, v_in: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
        Ok(self.forward_with_weights(p, q_in, k_in, v_in, mask)?.0)
    }

    /// Also returns each head's attention matrix.
    pub fn forward_with_weights(
        &self,
        p: &Binding,
        q_in: &Tensor,
        k_in: &Tensor,
        v_in: &Tensor,
        mask: Option<&[bool]>,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        let q = self.q.forward(p, q_in)?;
        let k = self.k.forward(p, k_in)?;
        let v = self.v.forward(p, v_in)?;
        let dim = self.q.dout;
        let dk = dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(1, h * dk, dk)?;
            let kh = k.narrow(1, h * dk, dk)?;
            let vh = v.narrow(1, h * dk, dk)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            let a = match mask {
                Some(m) => scores.masked_softmax(m)?,
                None => scores.softmax()?,
            };
            outs.push(a.matmul(&vh)?);
            weights.push(a);
        }
        let parts: Vec<&Tensor> = outs.iter().collect();
        let merged = if parts.len() == 1 {
            outs[0].clone()
        } else {
            Tensor::concat(&parts, 1)?
        };
        Ok((self.o.forward(p, &merged)?, weights))
    }
}

/// Position-wise `Linear → ReLU → Linear`.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new(prefix: &str, dim: usize, hidden: usize) -> Self {
        Self {
            up: Linear::new(&format!("{prefix}.up"), dim, hidden),
            down: Linear::new(&format!("{prefix}.down"), hidden, dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.up.init(store, rng)?;
        self.down.init(store, rng)
    }

    pub fn forward(&self, p: &Binding, x: &Tensor) -> Result<Tensor> {
        self.down.forward(p, &self.up.forward(p, x)?.relu())
    }
}

/// Output of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerOutput {
    pub tokens: Tensor,
    /// Objectiveness logit per token, shape `[T]`.
    pub s: Tensor,
    /// Predicted box distances, shape `[T, 9]`.
    pub d: Tensor,
}

#[derive(Debug, Clone)]
pub struct HybridLayer {
    pub global: MultiHeadAttention,
    pub local: MultiHeadAttention,
    pub merge: Linear,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
    pub s_head: Mlp,
    pub d_head: Mlp,
    pub hybrid: bool,
    dim: usize,
}

impl HybridLayer {
    pub fn new(prefix: &str, dim: usize, heads: usize, ffn_mult: usize, hybrid: bool) -> Self {
        Self {
            global: MultiHeadAttention::new(&format!("{prefix}.global"), dim, heads),
            local: MultiHeadAttention::new(&format!("{prefix}.local"), dim, heads),
            merge: Linear::new(&format!("{prefix}.merge"), 2 * dim, dim),
            norm1: LayerNorm::new(&format!("{prefix}.norm1"), dim),
            ffn: FeedForward::new(&format!("{prefix}.ffn"), dim, ffn_mult * dim),
            norm2: LayerNorm::new(&format!("{prefix}.norm2"), dim),
            s_head: Mlp::new(&format!("{prefix}.s_head"), &[dim, dim, 1]),
            d_head: Mlp::new(&format!("{prefix}.d_head"), &[dim, dim, 9]),
            hybrid,
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.global.init(store, rng)?;
        self.local.init(store, rng)?;
        self.merge.init(store, rng)?;
        self.norm1.init(store)?;
        self.ffn.init(store, rng)?;
        self.norm2.init(store)?;
        self.s_head.init(store, rng)?;
        self.d_head.init(store, rng)
    }

    /// `local_mask` is ignored when the layer is not hybrid.
    pub fn forward(&self, p: &Binding, f: &Tensor, pe: &Tensor, me: &Tensor, local_mask: &[bool]) -> Result<LayerOutput> {
        let qk = f.add(pe)?;
        let v = f.add(me)?;
        let g = self.global.forward(p, &qk, &qk, &v, None)?;
        let merged = if self.hybrid {
            let l = self.local.forward(p, &qk, &qk, &v, Some(local_mask))?;
            self.merge.forward(p, &Tensor::concat(&[&g, &l], 1)?)?
        } else {
            // Only the global half of the merge weights.
            let w = p.get(&self.merge.weight)?.narrow(0, 0, self.dim)?;
            g.matmul(&w)?.add_bias(&p.get(&self.merge.bias)?)?
        };
        let x = self.norm1.forward(p, &f.add(&merged)?)?;
        let tokens = self.norm2.forward(p, &x.add(&self.ffn.forward(p, &x)?)?)?;
        let t = tokens.shape()[0];
        let s = self.s_head.forward(p, &tokens)?.reshape(&[t])?;
        let d = self.d_head.forward(p, &tokens)?;
        Ok(LayerOutput { tokens, s, d })
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub tokens: Tensor,
    /// Position embedding, reused as the decoder's memory position.
    pub pe: Tensor,
    pub s: Vec<Tensor>,
    pub d: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub pos: Mlp,
    pub temporal: String,
    pub mask_embed: Mlp,
    pub layers: Vec<HybridLayer>,
    frames: usize,
    dim: usize,
}

impl Encoder {
    /// `frames` is `n + 1`.
    pub fn new(prefix: &str, cfg: EncoderConfig, dim: usize, frames: usize) -> Result<Self> {
        cfg.validate(dim)?;
        let layers = (0..cfg.layers)
            .map(|i| HybridLayer::new(&format!("{prefix}.layer{i}"), dim, cfg.heads, cfg.ffn_mult, cfg.hybrid))
            .collect();
        Ok(Self {
            pos: Mlp::new(&format!("{prefix}.pos"), &[3, dim, dim]),
            temporal: format!("{prefix}.temporal"),
            mask_embed: Mlp::new(&format!("{prefix}.mask"), &[MASK_DIM, dim, dim]),
            layers,
            cfg,
            frames,
            dim,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.pos.init(store, rng)?;
        let table = (0..self.frames * self.dim).map(|_| rng.gen_range(-0.1..0.1)).collect();
        store.insert(&self.temporal, &[self.frames, self.dim], table)?;
        self.mask_embed.init(store, rng)?;
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    /// `PE = MLP(coords) + table[temporal index]`, `ME = MLP(M′)`.
    pub fn embeddings(&self, p: &Binding, input: &StreamInput, mask: &PointMask) -> Result<(Tensor, Tensor)> {
        let coords = Tensor::new(input.coords.iter().flatten().copied().collect(), &[input.len(), 3])?;
        let pe = self
            .pos
            .forward(p, &coords)?
            .add(&p.get(&self.temporal)?.gather_rows(&input.temporal)?)?;
        let me = self.mask_embed.forward(p, &mask.features()?)?;
        Ok((pe, me))
    }

    pub fn forward(&self, p: &Binding, input: &StreamInput, mask: &PointMask) -> Result<EncoderOutput> {
        if input.frames() != self.frames {
            return Err(Error::shape("encoder", &[self.frames], &[input.frames()]));
        }
        let (pe, me) = self.embeddings(p, input, mask)?;
        let mut f = input.feats.clone();
        let mut s = Vec::with_capacity(self.layers.len());
        let mut d = Vec::with_capacity(self.layers.len());
        for (layer, &r) in self.layers.iter().zip(&self.cfg.radii) {
            let local = if layer.hybrid {
                local_neighbor_mask(
                    &input.coords,
                    input.tokens_per_frame,
                    r,
                    self.cfg.neighbor_cap,
                    self.cfg.cross_frame_local,
                )?
            } else {
                Vec::new()
            };
            let out = layer.forward(p, &f, &pe, &me, &local)?;
            f = out.tokens;
            s.push(out.s);
            d.push(out.d);
        }
        Ok(EncoderOutput { tokens: f, pe, s, d })
    }
}

/// Point-loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointLossWeights {
    pub objectiveness: f64,
    pub distance: f64,
}

impl Default for PointLossWeights {
    fn default() -> Self {
        Self {
            objectiveness: 0.1,
            distance: 1.0,
        }
    }
}

/// `Σ_l (λ_s · mean BCE(s_l, ŝ) + λ_d · mean smoothL1(d_l, d̂))`.
pub fn point_loss(s: &[Tensor], d: &[Tensor], targets: &PointTargets, w: &PointLossWeights) -> Result<Tensor> {
    let dt: Vec<f64> = targets.d.iter().flatten().copied().collect();
    let mut total = Tensor::scalar(0.0);
    for (sl, dl) in s.iter().zip(d) {
        let ce = sl.bce_with_logits(&targets.s)?.mean();
        let reg = dl.smooth_l1(&dt, 1.0)?.mean();
        total = total.add(&ce.scale(w.objectiveness))?.add(&reg.scale(w.distance))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::FrameFeatures;
    use crate::memory::{assemble_frames, HistoryFrame};
    use crate::tensor::gradcheck::{check_fn, check_params, Probe};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape).unwrap()
    }

    fn stream(rng: &mut impl Rng, k: usize, n: usize, width: usize) -> StreamInput {
        let reference = Box3D::new([0.3, -0.2, 0.0], [1.0, 2.0, 1.5], 0.4).unwrap();
        let current = FrameFeatures {
            coords: (0..k)
                .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)])
                .collect(),
            feats: rand_tensor(rng, &[k, width]),
        };
        let history: Vec<HistoryFrame> = (0..n)
            .map(|i| HistoryFrame {
                coords_world: (0..k)
                    .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)])
                    .collect(),
                feats: rand_tensor(rng, &[k, width]),
                box_world: Box3D::new([0.1 * i as f64, 0.0, 0.0], [1.0, 2.0, 1.5], 0.3).unwrap(),
            })
            .collect();
        assemble_frames(&current, &reference, &history, n).unwrap()
    }

    #[test]
    fn mask_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = stream(&mut rng, 4, 2, 8);
        let b = s.frame_boxes[1].unwrap();
        s.coords_world[4] = b.center;
        s.coords_world[5] = [b.center[0] + 10.0, 0.0, 0.0];
        let m = build_point_mask(&s);
        assert!(m.m[..4].iter().all(|&v| v == 0.5));
        assert!(m.dist[..4].iter().all(|d| d == &[0.0; 9]));
        assert_eq!(m.m[4], 1.0);
        assert_eq!(m.m[5], 0.0);
        assert!(m.m[4..].iter().all(|&v| v == 0.0 || v == 1.0));
        let half_diag = (0.25f64 + 1.0 + 0.5625).sqrt();
        assert_eq!(m.dist[4][0], 0.0);
        for c in 1..9 {
            assert!((m.dist[4][c] - half_diag).abs() < 1e-12);
        }
        assert_eq!(m.features().unwrap().shape(), &[12, MASK_DIM]);
    }

    #[test]
    fn targets_use_each_frames_gt() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut s = stream(&mut rng, 3, 1, 4);
        let gts = [
            Box3D::new([5.0, 5.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap(),
            Box3D::new([-5.0, 5.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap(),
        ];
        s.coords_world[0] = [5.0, 5.0, 0.0];
        s.coords_world[3] = [-5.0, 5.0, 0.0];
        let t = point_targets(&s, &gts).unwrap();
        assert_eq!(t.s[0], 1.0);
        assert_eq!(t.s[3], 1.0);
        assert_eq!(t.d[3][0], 0.0);
        assert!(point_targets(&s, &gts[..1]).is_err());
    }

    fn attn(seed: u64, dim: usize, heads: usize) -> (MultiHeadAttention, ParamStore) {
        let a = MultiHeadAttention::new("a", dim, heads);
        let mut store = ParamStore::new();
        a.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (a, store)
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, store) = attn(3, 8, 2);
        let p = Binding::frozen(&store);
        let row = rand_tensor(&mut rng, &[1, 8]);
        let keys = Tensor::concat(&[&row, &row, &row, &row], 0).unwrap();
        let q = rand_tensor(&mut rng, &[1, 8]);
        let v = rand_tensor(&mut rng, &[4, 8]);
        let out = a.forward(&p, &q, &keys, &v, None).unwrap();
        let mean_v = v.sum_axis(0).unwrap().scale(0.25).reshape(&[1, 8]).unwrap();
        let want = a.o.forward(&p, &a.v.forward(&p, &mean_v).unwrap()).unwrap();
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_token_is_value_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, store) = attn(4, 8, 4);
        let p = Binding::frozen(&store);
        let x = rand_tensor(&mut rng, &[1, 8]);
        let v = rand_tensor(&mut rng, &[1, 8]);
        let out = a.forward(&p, &x, &x, &v, None).unwrap();
        let want = a.o.forward(&p, &a.v.forward(&p, &v).unwrap()).unwrap();
        for (x, y) in out.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, store) = attn(5, 8, 2);
        let x = rand_tensor(&mut rng, &[7, 8]);
        let (_, w) = a.forward_with_weights(&Binding::frozen(&store), &x, &x, &x, None).unwrap();
        for head in w {
            for row in head.data().chunks(7) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn global_attention_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, store) = attn(6, 8, 2);
        let p = Binding::frozen(&store);
        let qk = rand_tensor(&mut rng, &[6, 8]);
        let v = rand_tensor(&mut rng, &[6, 8]);
        let perm = [3, 0, 5, 1, 4, 2];
        let out = a.forward(&p, &qk, &qk, &v, None).unwrap();
        let pq = qk.gather_rows(&perm).unwrap();
        let pv = v.gather_rows(&perm).unwrap();
        let pout = a.forward(&p, &pq, &pq, &pv, None).unwrap();
        let want = out.gather_rows(&perm).unwrap();
        for (x, y) in pout.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_mask_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords: Vec<Point> = (0..30).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect();
        let mask = local_neighbor_mask(&coords, 10, 0.5, 100, false).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let same = i / 10 == j / 10;
                let want = same && crate::geom::dist(&coords[i], &coords[j]) < 0.5;
                assert_eq!(mask[i * 30 + j], want, "{i} {j}");
            }
        }
        let cross = local_neighbor_mask(&coords, 10, 1e9, 100, true).unwrap();
        assert!(cross.iter().all(|&m| m));
    }

    fn layer(seed: u64, dim: usize, hybrid: bool) -> (HybridLayer, ParamStore) {
        let l = HybridLayer::new("l", dim, 2, 2, hybrid);
        let mut store = ParamStore::new();
        l.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (l, store)
    }

    #[test]
    fn layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (l, store) = layer(8, 8, true);
        let [f, pe, me] = [0, 1, 2].map(|_| rand_tensor(&mut rng, &[6, 8]));
        let out = l.forward(&Binding::frozen(&store), &f, &pe, &me, &[true; 36]).unwrap();
        assert_eq!(out.tokens.shape(), &[6, 8]);
        assert_eq!(out.s.shape(), &[6]);
        assert_eq!(out.d.shape(), &[6, 9]);
    }

    #[test]
    fn zeroed_attention_leaves_the_ffn_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (l, mut store) = layer(9, 8, true);
        for name in [&l.global.o.weight, &l.global.o.bias, &l.local.o.weight, &l.local.o.bias] {
            store.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = Binding::frozen(&store);
        let [f, pe, me] = [0, 1, 2].map(|_| rand_tensor(&mut rng, &[6, 8]));
        let out = l.forward(&p, &f, &pe, &me, &[true; 36]).unwrap();
        let x = l.norm1.forward(&p, &f.add_bias(&p.get(&l.merge.bias).unwrap()).unwrap()).unwrap();
        let want = l.norm2.forward(&p, &x.add(&l.ffn.forward(&p, &x).unwrap()).unwrap()).unwrap();
        for (a, b) in out.tokens.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_local_merge_equals_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (hyb, mut store) = layer(10, 8, true);
        let w = store.get_mut(&hyb.merge.weight).unwrap();
        w.data[8 * 8..].iter_mut().for_each(|v| *v = 0.0);
        let (van, _) = layer(10, 8, false);
        let [f, pe, me] = [0, 1, 2].map(|_| rand_tensor(&mut rng, &[6, 8]));
        let mask: Vec<bool> = (0..36).map(|i| i % 7 == 0 || i % 3 == 0).collect();
        let p = Binding::frozen(&store);
        let a = hyb.forward(&p, &f, &pe, &me, &mask).unwrap();
        let b = van.forward(&p, &f, &pe, &me, &mask).unwrap();
        for (x, y) in a.tokens.data().iter().zip(b.tokens.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (l, store) = layer(11, 8, true);
        let mask: Vec<bool> = (0..36).map(|i| i % 7 == 0 || i % 4 == 1).collect();
        let inputs: Vec<(Vec<f64>, Vec<usize>)> = (0..3)
            .map(|_| ((0..48).map(|_| rng.gen_range(-1.0..1.0)).collect(), vec![6, 8]))
            .collect();
        let wt = rand_tensor(&mut rng, &[6, 8]);
        let ws = rand_tensor(&mut rng, &[6]);
        let wd = rand_tensor(&mut rng, &[6, 9]);
        let readout = |o: &LayerOutput| -> Result<Tensor> { o.tokens.mul(&wt)?.sum().add(&o.s.mul(&ws)?.sum())?.add(&o.d.mul(&wd)?.sum()) };
        let frozen = Binding::frozen(&store);
        let r = check_fn(
            "layer inputs",
            |x| readout(&l.forward(&frozen, &x[0], &x[1], &x[2], &mask)?),
            &inputs,
            Probe::Directions(4),
            &mut rng,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        let [f, pe, me] = [0, 1, 2].map(|i| Tensor::new(inputs[i].0.clone(), &[6, 8]).unwrap());
        let r = check_params(
            "layer params",
            &store,
            |p| readout(&l.forward(p, &f, &pe, &me, &mask)?),
            2,
            &mut rng,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn embeddings_and_encoder_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = stream(&mut rng, 5, 2, 8);
        let cfg = EncoderConfig {
            layers: 2,
            radii: vec![0.8, 1.5],
            heads: 2,
            neighbor_cap: 4,
            ..EncoderConfig::default()
        };
        let enc = Encoder::new("enc", cfg, 8, 3).unwrap();
        let mut store = ParamStore::new();
        enc.init(&mut store, &mut rng).unwrap();
        let mut s2 = s.clone();
        s2.coords[1] = s2.coords[0];
        let mask = build_point_mask(&s2);
        let p = Binding::frozen(&store);
        let (pe, me) = enc.embeddings(&p, &s2, &mask).unwrap();
        assert_eq!(pe.shape(), &[15, 8]);
        assert_eq!(me.shape(), &[15, 8]);
        assert_eq!(pe.data()[..8], pe.data()[8..16]);

        store.get_mut(&enc.temporal).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
        let p = Binding::frozen(&store);
        let (pe0, _) = enc.embeddings(&p, &s2, &mask).unwrap();
        let coords = Tensor::new(s2.coords.iter().flatten().copied().collect(), &[15, 3]).unwrap();
        assert_eq!(pe0.data(), enc.pos.forward(&p, &coords).unwrap().data());

        let out = enc.forward(&p, &s, &build_point_mask(&s)).unwrap();
        assert_eq!(out.tokens.shape(), &[15, 8]);
        assert_eq!(out.s.len(), 2);
        assert!(Encoder::new("enc", EncoderConfig::default(), 6, 3).is_err());
    }

    #[test]
    fn point_loss_zero_at_perfect_prediction() {
        let targets = PointTargets {
            s: vec![1.0, 0.0],
            d: vec![[0.3; 9], [1.5; 9]],
        };
        let s = Tensor::new(vec![60.0, -60.0], &[2]).unwrap();
        let d = Tensor::new(targets.d.iter().flatten().copied().collect(), &[2, 9]).unwrap();
        let l = point_loss(&[s.clone()], &[d.clone()], &targets, &PointLossWeights::default()).unwrap();
        assert!(l.item() < 1e-20);
        let d_off = Tensor::new(targets.d.iter().flatten().map(|v| v + 0.5).collect(), &[2, 9]).unwrap();
        let l = point_loss(&[s], &[d_off], &targets, &PointLossWeights::default()).unwrap();
        assert!((l.item() - 0.125).abs() < 1e-12);
    }
}
