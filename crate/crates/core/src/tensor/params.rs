//! Named parameter storage, graph binding and the checkpoint format.
//!
//! Checkpoints are JSON objects:
//!
//! ```text
//! { "format": "streamtrack-params", "version": 1,
//!   "groups": { "<group>": { "<name>": { "shape": [..], "data": [..] }, .. }, .. } }
//! ```
//!
//! `data` is row-major; floats are written in shortest round-trip form so
//! reading a checkpoint back reproduces every bit.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{numel, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "streamtrack-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<()> {
        if data.len() != numel(shape) {
            return Err(Error::shape("param insert", &[data.len()], shape));
        }
        self.params.insert(
            name.into(),
            Param {
                shape: shape.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Copy of every parameter whose name starts with one of `prefixes`.
    pub fn subset(&self, prefixes: &[&str]) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Overwrites values of matching names from `other`.
    pub fn overwrite_from(&mut self, other: &ParamStore) -> Result<()> {
        for (k, v) in &other.params {
            let dst = self.params.get_mut(k).ok_or_else(|| Error::UnknownParam(k.clone()))?;
            if dst.shape != v.shape {
                return Err(Error::shape("overwrite_from", &dst.shape, &v.shape));
            }
            dst.data.clone_from(&v.data);
        }
        Ok(())
    }
}

/// Binds a [`ParamStore`] to one forward pass. Each parameter becomes a
/// single tensor on first use; with `trainable` the tensors are gradient
/// leaves and [`Binding::grads`] collects their gradients after backward.
pub struct Binding<'a> {
    store: &'a ParamStore,
    trainable: bool,
    bound: RefCell<BTreeMap<String, Tensor>>,
}

impl<'a> Binding<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self {
            store,
            trainable: true,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn frozen(store: &'a ParamStore) -> Self {
        Self {
            store,
            trainable: false,
            bound: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Result<Tensor> {
        if let Some(t) = self.bound.borrow().get(name) {
            return Ok(t.clone());
        }
        let p = self.store.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let t = if self.trainable {
            Tensor::param(p.data.clone(), &p.shape)?
        } else {
            Tensor::new(p.data.clone(), &p.shape)?
        };
        self.bound.borrow_mut().insert(name.to_string(), t.clone());
        Ok(t)
    }

    /// Gradients of every bound parameter that received one.
    pub fn grads(&self) -> Grads {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
            .collect()
    }
}

/// `acc += scale · g`, key by key.
pub fn accumulate_grads(acc: &mut Grads, g: &Grads, scale: f64) {
    for (k, v) in g {
        match acc.get_mut(k) {
            Some(a) => a.iter_mut().zip(v).for_each(|(a, b)| *a += scale * b),
            None => {
                acc.insert(k.clone(), v.iter().map(|b| scale * b).collect());
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    groups: BTreeMap<String, ParamStore>,
}

/// Writes named parameter groups (e.g. live and momentum weights).
pub fn save_checkpoint(path: &Path, groups: &[(&str, &ParamStore)]) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        groups: groups.iter().map(|(name, store)| (name.to_string(), (*store).clone())).collect(),
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BTreeMap<String, ParamStore>> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                file.format, file.version
            ),
        });
    }
    for store in file.groups.values() {
        for (name, p) in store.iter() {
            if p.data.len() != numel(&p.shape) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    msg: format!("parameter `{name}` has {} values for shape {:?}", p.data.len(), p.shape),
                });
            }
        }
    }
    Ok(file.groups)
}
