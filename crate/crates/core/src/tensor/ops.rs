use super::{numel, Tensor};
use crate::error::{Error, Result};

/// (outer, axis extent, inner) split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last_dim(t: &Tensor, op: &'static str) -> Result<usize> {
    match t.shape().last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(Error::invalid(op, format!("needs a non-empty last axis, got {:?}", t.shape()))),
    }
}

fn check_axis(t: &Tensor, axis: usize, op: &'static str) -> Result<()> {
    if axis >= t.shape().len() {
        return Err(Error::invalid(op, format!("axis {axis} out of range for {:?}", t.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-major `c = a·b` (optionally transposing either factor) via dgemm.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // a is m×k (or k×m stored when transposed), b is k×n (or n×k).
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths cover the strided extents checked by callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl Tensor {
    fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    fn unary(&self, name: &'static str, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = out.clone();
        Tensor::from_op(
            name,
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g.iter().zip(x.data()).zip(&y).map(|((g, &x), &y)| g * df(x, y)).collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_shape(other, "add")?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            "add",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_shape(other, "sub")?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            "sub",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(|g, _| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_shape(other, "mul")?;
        let out = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "mul",
            out,
            self.shape().to_vec(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
                let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Adds `bias` (shape `[d]`) to every row along the last axis.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = last_dim(self, "add_bias")?;
        if bias.shape() != [d] {
            return Err(Error::shape("add_bias", self.shape(), bias.shape()));
        }
        let out = self
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bias.data()).map(|(x, b)| x + b))
            .collect();
        Ok(Tensor::from_op(
            "add_bias",
            out,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![0.0; d];
                    for row in g.chunks(d) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![Some(g.to_vec()), gb]
            }),
        ))
    }

    /// Multiplies every row along the last axis by `scale` (shape `[d]`).
    pub fn mul_bias(&self, scale: &Tensor) -> Result<Tensor> {
        let d = last_dim(self, "mul_bias")?;
        if scale.shape() != [d] {
            return Err(Error::shape("mul_bias", self.shape(), scale.shape()));
        }
        let out = self
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(scale.data()).map(|(x, s)| x * s))
            .collect();
        let (x, s) = (self.clone(), scale.clone());
        Ok(Tensor::from_op(
            "mul_bias",
            out,
            self.shape().to_vec(),
            vec![self.clone(), scale.clone()],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| g.chunks(d).flat_map(|row| row.iter().zip(s.data()).map(|(g, s)| g * s)).collect());
                let gs = needs[1].then(|| {
                    let mut acc = vec![0.0; d];
                    for (grow, xrow) in g.chunks(d).zip(x.data().chunks(d)) {
                        for ((a, g), x) in acc.iter_mut().zip(grow).zip(xrow) {
                            *a += g * x;
                        }
                    }
                    acc
                });
                vec![gx, gs]
            }),
        ))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(
            "scale",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|g| g * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let out = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(
            "add_scalar",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Tensor {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    /// `[m,k]·[k,n] → [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2().map_err(|_| Error::shape("matmul", self.shape(), other.shape()))?;
        let (k2, n) = other.dims2().map_err(|_| Error::shape("matmul", self.shape(), other.shape()))?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let out = gemm(m, k, n, self.data(), false, other.data(), false);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| gemm(m, n, k, g, false, b.data(), true));
                let gb = needs[1].then(|| gemm(k, m, n, a.data(), true, g, false));
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        let src = self.data();
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            "transpose",
            out,
            vec![c, r],
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            self.data().to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        check_axis(first, axis, "concat")?;
        let rank = first.shape().len();
        for p in &parts[1..] {
            let ok = p.shape().len() == rank && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &e) in parts.iter().zip(&extents) {
                out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Ok(Tensor::from_op(
            "concat",
            out,
            shape,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, needs| {
                let mut grads: Vec<Option<Vec<f64>>> = needs
                    .iter()
                    .zip(&extents)
                    .map(|(&n, &e)| n.then(|| Vec::with_capacity(outer * e * inner)))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (gp, &e) in grads.iter_mut().zip(&extents) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g[off..off + e * inner]);
                        }
                        off += e * inner;
                    }
                }
                grads
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(self, axis, "narrow")?;
        if start + len > self.shape()[axis] {
            return Err(Error::invalid(
                "narrow",
                format!(
                    "range {start}..{} exceeds extent {} of {:?}",
                    start + len,
                    self.shape()[axis],
                    self.shape()
                ),
            ));
        }
        let (outer, ext, inner) = split_axis(self.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * ext + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let n = self.numel();
        Ok(Tensor::from_op(
            "narrow",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for o in 0..outer {
                    let base = (o * ext + start) * inner;
                    gx[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Selects slices along axis 0; indices may repeat.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let rows = *self.shape().first().ok_or_else(|| Error::invalid("gather_rows", "rank-0 input"))?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("gather_rows", format!("index {bad} out of range for {rows} rows")));
        }
        let w = self.numel() / rows.max(1);
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(&self.data()[i * w..(i + 1) * w]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = idx.len();
        let idx = idx.to_vec();
        let n = self.numel();
        Ok(Tensor::from_op(
            "gather_rows",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for (k, &i) in idx.iter().enumerate() {
                    for (a, b) in gx[i * w..(i + 1) * w].iter_mut().zip(&g[k * w..(k + 1) * w]) {
                        *a += b;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![self.data().iter().sum()],
            vec![],
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis, "sum_axis")?;
        let (outer, ext, inner) = split_axis(self.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..ext {
                let src = &self.data()[(o * ext + a) * inner..(o * ext + a + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "sum_axis",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = Vec::with_capacity(outer * ext * inner);
                for o in 0..outer {
                    for _ in 0..ext {
                        gx.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Maximum along `axis`. The subgradient goes to the first maximal index.
    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        check_axis(self, axis, "max_axis")?;
        let (outer, ext, inner) = split_axis(self.shape(), axis);
        if ext == 0 {
            return Err(Error::invalid("max_axis", "empty axis"));
        }
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        let x = self.data();
        for o in 0..outer {
            for a in 0..ext {
                for i in 0..inner {
                    let v = x[(o * ext + a) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] || a == 0 {
                        out[slot] = v;
                        arg[slot] = a;
                    }
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        let n = self.numel();
        Ok(Tensor::from_op(
            "max_axis",
            out,
            shape,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; n];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        gx[(o * ext + arg[slot]) * inner + i] += g[slot];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let d = last_dim(self, "softmax")?;
        self.softmax_impl("softmax", d, None)
    }

    /// Softmax over the last axis of a rank-2 tensor where entries with
    /// `mask == false` get probability exactly zero. Every row needs at least
    /// one admitted entry.
    pub fn masked_softmax(&self, mask: &[bool]) -> Result<Tensor> {
        let (_, d) = self.dims2()?;
        if mask.len() != self.numel() {
            return Err(Error::shape("masked_softmax", self.shape(), &[mask.len()]));
        }
        if mask.chunks(d).any(|row| !row.iter().any(|&m| m)) {
            return Err(Error::invalid("masked_softmax", "row with no admitted entries"));
        }
        self.softmax_impl("masked_softmax", d, Some(mask))
    }

    fn softmax_impl(&self, name: &'static str, d: usize, mask: Option<&[bool]>) -> Result<Tensor> {
        let admitted = |i: usize| mask.map_or(true, |m| m[i]);
        let mut out = vec![0.0; self.numel()];
        for (r, (row, orow)) in self.data().chunks(d).zip(out.chunks_mut(d)).enumerate() {
            let base = r * d;
            let mx = row
                .iter()
                .enumerate()
                .filter(|(j, _)| admitted(base + j))
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, (o, &v)) in orow.iter_mut().zip(row).enumerate() {
                if admitted(base + j) {
                    *o = (v - mx).exp();
                    z += *o;
                }
            }
            orow.iter_mut().for_each(|o| *o /= z);
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            name,
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), xr) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((x, g), y) in xr.iter_mut().zip(gr).zip(yr) {
                        *x = y * (g - dot);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let d = last_dim(self, "log_softmax")?;
        let mut out = vec![0.0; self.numel()];
        for (row, orow) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            orow.iter_mut().zip(row).for_each(|(o, v)| *o = v - lse);
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            "log_softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; y.len()];
                for ((gr, yr), xr) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let gs: f64 = gr.iter().sum();
                    for ((x, g), y) in xr.iter_mut().zip(gr).zip(yr) {
                        *x = g - y.exp() * gs;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalises each last-axis row to zero mean, unit variance (biased
    /// variance, no affine part).
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let d = last_dim(self, "layer_norm")?;
        let mut out = vec![0.0; self.numel()];
        let mut inv_std = Vec::with_capacity(self.numel() / d);
        for (row, orow) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            orow.iter_mut().zip(row).for_each(|(o, v)| *o = (v - mu) * is);
            inv_std.push(is);
        }
        let xhat = out.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; xhat.len()];
                for (((gr, hr), xr), is) in g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).zip(&inv_std) {
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgh = gr.iter().zip(hr).map(|(g, h)| g * h).sum::<f64>() / d as f64;
                    for ((x, g), h) in xr.iter_mut().zip(gr).zip(hr) {
                        *x = is * (g - mg - h * mgh);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Scales each last-axis row to unit Euclidean norm, `x / sqrt(|x|² + eps)`.
    pub fn l2_normalize(&self, eps: f64) -> Result<Tensor> {
        let d = last_dim(self, "l2_normalize")?;
        let mut out = vec![0.0; self.numel()];
        let mut norms = Vec::with_capacity(self.numel() / d);
        for (row, orow) in self.data().chunks(d).zip(out.chunks_mut(d)) {
            let n = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
            orow.iter_mut().zip(row).for_each(|(o, v)| *o = v / n);
            norms.push(n);
        }
        let y = out.clone();
        Ok(Tensor::from_op(
            "l2_normalize",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; y.len()];
                for (((gr, yr), xr), n) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)).zip(&norms) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((x, g), y) in xr.iter_mut().zip(gr).zip(yr) {
                        *x = (g - y * dot) / n;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Elementwise smooth-L1 (Huber with threshold `beta`) against constant
    /// targets: `0.5·r²/beta` when `|r| < beta`, else `|r| − 0.5·beta`.
    pub fn smooth_l1(&self, target: &[f64], beta: f64) -> Result<Tensor> {
        if target.len() != self.numel() {
            return Err(Error::shape("smooth_l1", self.shape(), &[target.len()]));
        }
        let resid: Vec<f64> = self.data().iter().zip(target).map(|(x, t)| x - t).collect();
        let out = resid
            .iter()
            .map(|&r| if r.abs() < beta { 0.5 * r * r / beta } else { r.abs() - 0.5 * beta })
            .collect();
        Ok(Tensor::from_op(
            "smooth_l1",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(&resid)
                    .map(|(g, &r)| g * if r.abs() < beta { r / beta } else { r.signum() })
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }

    /// Elementwise binary cross-entropy on logits against targets in [0, 1].
    pub fn bce_with_logits(&self, target: &[f64]) -> Result<Tensor> {
        if target.len() != self.numel() {
            return Err(Error::shape("bce_with_logits", self.shape(), &[target.len()]));
        }
        let out = self.data().iter().zip(target).map(|(&x, &t)| softplus(x) - x * t).collect();
        let x = self.clone();
        let t = target.to_vec();
        Ok(Tensor::from_op(
            "bce_with_logits",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g.iter().zip(x.data()).zip(&t).map(|((g, &x), &t)| g * (sigmoid(x) - t)).collect();
                vec![Some(gx)]
            }),
        ))
    }

    /// Elementwise sigmoid focal loss on logits against {0, 1} targets:
    /// `−α_t (1 − p_t)^γ ln p_t`.
    pub fn sigmoid_focal(&self, target: &[f64], alpha: f64, gamma: f64) -> Result<Tensor> {
        if target.len() != self.numel() {
            return Err(Error::shape("sigmoid_focal", self.shape(), &[target.len()]));
        }
        // Work in z = ±x so that p_t = σ(z).
        let signs: Vec<f64> = target.iter().map(|&t| if t > 0.5 { 1.0 } else { -1.0 }).collect();
        let alphas: Vec<f64> = signs.iter().map(|&s| if s > 0.0 { alpha } else { 1.0 - alpha }).collect();
        let out = self
            .data()
            .iter()
            .zip(&signs)
            .zip(&alphas)
            .map(|((&x, &s), &a)| {
                let z = s * x;
                a * (1.0 - sigmoid(z)).powf(gamma) * softplus(-z)
            })
            .collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            "sigmoid_focal",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(x.data())
                    .zip(&signs)
                    .zip(&alphas)
                    .map(|(((g, &x), &s), &a)| {
                        let z = s * x;
                        let p = sigmoid(z);
                        let q = 1.0 - p;
                        // d/dz of a·q^γ·(−ln p)
                        let dz = -a * (gamma * q.powf(gamma) * p * softplus(-z) + q.powf(gamma + 1.0));
                        g * dz * s
                    })
                    .collect();
                vec![Some(gx)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::param(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let y = t(&[0.0, 0.0, 0.0], &[3]).softmax().unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let i = Tensor::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let a = t(&[1.5, -2.0, 3.25, 4.0], &[2, 2]);
        assert_eq!(i.matmul(&a).unwrap().data(), a.data());
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = t(&[1.0; 6], &[2, 3]);
        let b = t(&[1.0; 6], &[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let msg = a.add(&t(&[1.0; 3], &[3])).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn softmax_cross_entropy_gradient_at_uniform_logits() {
        let x = t(&[0.0, 0.0, 0.0], &[3]);
        let loss = x.log_softmax().unwrap().narrow(0, 0, 1).unwrap().sum().neg();
        loss.backward().unwrap();
        let g = x.grad().unwrap();
        let want = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_and_square_gradients() {
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);

        let x = t(&[2.0], &[1]);
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let x = t(&[1.0, 2.0], &[2]);
        assert!(matches!(x.exp().backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = t(&[3.0], &[1]);
        let y = x.scale(2.0).sum();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
        x.zero_grad();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn max_ties_route_to_first_index() {
        let x = t(&[1.0, 5.0, 5.0, 2.0], &[4]);
        let m = x.reshape(&[1, 4]).unwrap().max_axis(1).unwrap();
        assert_eq!(m.data(), &[5.0]);
        m.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let x = t(&[1.0, 2.0, 3.0, 0.0, 0.0, 0.0], &[2, 3]);
        let y = x.masked_softmax(&[true, false, true, false, true, false]).unwrap();
        assert_eq!(y.data()[1], 0.0);
        assert_eq!(y.data()[3], 0.0);
        assert_eq!(y.data()[4], 1.0);
        let e = (1.0f64).exp() + (3.0f64).exp();
        assert!((y.data()[0] - 1.0f64.exp() / e).abs() < 1e-15);
        assert!(x.masked_softmax(&[false; 6]).is_err());
    }

    #[test]
    fn linear_zero_and_identity() {
        let x = Tensor::zeros(&[2, 3]);
        let w = t(&[0.5; 6], &[3, 2]);
        let b = t(&[1.0, -1.0], &[2]);
        let y = x.matmul(&w).unwrap().add_bias(&b).unwrap();
        assert_eq!(y.data(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn smooth_l1_branches() {
        let x = t(&[0.5, 2.0, -3.0], &[3]);
        let y = x.smooth_l1(&[0.0; 3], 1.0).unwrap();
        assert_eq!(y.data(), &[0.125, 1.5, 2.5]);
    }

    #[test]
    fn focal_fixture() {
        let x = t(&[0.0], &[1]);
        let y = x.sigmoid_focal(&[1.0], 0.25, 2.0).unwrap();
        let want = 0.25 * 0.25 * std::f64::consts::LN_2;
        assert!((y.item() - want).abs() < 1e-15);
        assert!((y.item() - 0.0433).abs() < 1e-4);
    }

    #[test]
    fn concat_and_narrow_invert() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0], &[2, 1]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 1).unwrap().data(), b.data());
    }
}
