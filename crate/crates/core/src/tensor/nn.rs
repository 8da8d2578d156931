//! Layers as named views into a [`ParamStore`].

use rand::Rng;

use super::{Binding, ParamStore, Tensor};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(prefix: &str, din: usize, dout: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
            din,
            dout,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let a = (6.0 / (self.din + self.dout) as f64).sqrt();
        let w = (0..self.din * self.dout).map(|_| rng.gen_range(-a..a)).collect();
        store.insert(&self.weight, &[self.din, self.dout], w)?;
        store.insert(&self.bias, &[self.dout], vec![0.0; self.dout])
    }

    /// `x·W + b` over the last axis of a rank-2 input.
    pub fn forward(&self, p: &Binding, x: &Tensor) -> Result<Tensor> {
        x.matmul(&p.get(&self.weight)?)?.add_bias(&p.get(&self.bias)?)
    }
}

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [din, h1, …, dout]`.
    pub fn new(prefix: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, rng))
    }

    pub fn forward(&self, p: &Binding, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(p, &h)?;
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        Ok(h)
    }

    /// Same as [`Mlp::forward`] but with a ReLU after the last layer too.
    pub fn forward_relu(&self, p: &Binding, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(p, x)?.relu())
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(prefix: &str, dim: usize) -> Self {
        Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            dim,
        }
    }

    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(&self.gamma, &[self.dim], vec![1.0; self.dim])?;
        store.insert(&self.beta, &[self.dim], vec![0.0; self.dim])
    }

    pub fn forward(&self, p: &Binding, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(Self::EPS)?
            .mul_bias(&p.get(&self.gamma)?)?
            .add_bias(&p.get(&self.beta)?)
    }
}
