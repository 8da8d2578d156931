//! Central finite-difference checks of analytic gradients.
//!
//! The error measure is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3·max(1, |f|))`.
//! The floor keeps near-zero derivatives from amplifying rounding noise; it
//! grows with the function value because a central difference cannot
//! resolve changes below a few ulps of `f`, i.e. about `1e-16·|f| / h`.

use rand::Rng;

use super::{Binding, ParamStore, Tensor};
use crate::error::Result;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
const FLOOR: f64 = 1e-3;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_at(analytic, numeric, 0.0)
}

/// [`rel_err`] for a function whose value at the base point is `value`.
pub fn rel_err_at(analytic: f64, numeric: f64, value: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR * value.abs().max(1.0))
}

/// How inputs are perturbed.
#[derive(Debug, Clone, Copy)]
pub enum Probe {
    /// Every coordinate separately.
    Coordinates,
    /// This many random unit directions per input tensor.
    Directions(usize),
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub probes: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            instances: 0,
            probes: 0,
            max_rel_err: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE && self.max_rel_err.is_finite()
    }

    pub fn merge(&mut self, other: &CheckReport) {
        self.instances += other.instances;
        self.probes += other.probes;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
    }
}

fn random_direction(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    d.into_iter().map(|v| v / norm).collect()
}

fn probes_for(n: usize, probe: Probe, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    match probe {
        Probe::Coordinates => (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect(),
        Probe::Directions(k) => (0..k).map(|_| random_direction(n, rng)).collect(),
    }
}

/// Checks `f` (scalar-valued) at one point. `inputs` are `(data, shape)`
/// pairs that become gradient leaves for the analytic pass and constants
/// for the perturbed passes.
pub fn check_fn<F>(name: &str, f: F, inputs: &[(Vec<f64>, Vec<usize>)], probe: Probe, rng: &mut impl Rng) -> Result<CheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s))
        .collect::<Result<Vec<_>>>()?;
    let root = f(&leaves)?;
    root.backward()?;
    let value = root.item();
    let mut report = CheckReport::new(name);
    report.instances = 1;
    let eval = |vals: &[Vec<f64>]| -> Result<f64> {
        let ts = vals
            .iter()
            .zip(inputs)
            .map(|(d, (_, s))| Tensor::new(d.clone(), s))
            .collect::<Result<Vec<_>>>()?;
        Ok(f(&ts)?.item())
    };
    for (k, leaf) in leaves.iter().enumerate() {
        let grad = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for dir in probes_for(leaf.numel(), probe, rng) {
            let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let mut vals: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
            let base = vals[k].clone();
            vals[k] = base.iter().zip(&dir).map(|(x, d)| x + STEP * d).collect();
            let up = eval(&vals)?;
            vals[k] = base.iter().zip(&dir).map(|(x, d)| x - STEP * d).collect();
            let down = eval(&vals)?;
            let numeric = (up - down) / (2.0 * STEP);
            report.probes += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err_at(analytic, numeric, value));
        }
    }
    Ok(report)
}

/// Checks the gradient of `f` with respect to every parameter in `store`,
/// probing each parameter tensor along random directions.
pub fn check_params<F>(name: &str, store: &ParamStore, f: F, directions: usize, rng: &mut impl Rng) -> Result<CheckReport>
where
    F: Fn(&Binding) -> Result<Tensor>,
{
    let binding = Binding::trainable(store);
    let root = f(&binding)?;
    root.backward()?;
    let value = root.item();
    let grads = binding.grads();
    let mut report = CheckReport::new(name);
    report.instances = 1;
    let mut scratch = store.clone();
    for (pname, p) in store.iter() {
        let grad = grads.get(pname).cloned().unwrap_or_else(|| vec![0.0; p.data.len()]);
        for dir in probes_for(p.data.len(), Probe::Directions(directions), rng) {
            let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
            let mut at = |sign: f64| -> Result<f64> {
                let slot = scratch.get_mut(pname).expect("cloned store");
                slot.data = p.data.iter().zip(&dir).map(|(x, d)| x + sign * STEP * d).collect();
                let v = f(&Binding::frozen(&scratch))?.item();
                scratch.get_mut(pname).expect("cloned store").data.clone_from(&p.data);
                Ok(v)
            };
            let numeric = (at(1.0)? - at(-1.0)?) / (2.0 * STEP);
            report.probes += 1;
            report.max_rel_err = report.max_rel_err.max(rel_err_at(analytic, numeric, value));
        }
    }
    Ok(report)
}
