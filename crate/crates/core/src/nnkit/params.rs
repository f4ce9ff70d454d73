use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{Grads, Graph};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    trainable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Named parameters with gradient slots and AdamW moments. Values are kept at
/// `f32` precision.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
    /// Free-form metadata persisted with the weights.
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

const FORMAT: &str = "wvsc-weights-f32le";

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, mut value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return invalid(format!("duplicate parameter `{name}`"));
        }
        if !value.all_finite() {
            return invalid(format!("parameter `{name}` has non-finite values"));
        }
        value.round_to_f32();
        let n = value.len();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: None,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
            trainable: true,
        });
        self.by_name.insert(name.to_string(), self.entries.len() - 1);
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, mut value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if value.shape() != e.value.shape() {
            return invalid(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            ));
        }
        value.round_to_f32();
        e.value = value;
        Ok(())
    }

    /// Sets a value without the `f32` rounding, for finite-difference probes.
    /// Shapes are not checked.
    pub fn set_value_unrounded(&mut self, id: ParamId, value: Tensor) {
        self.entries[id.0].value = value;
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn set_all_trainable(&mut self, on: bool) {
        for e in &mut self.entries {
            e.trainable = on;
        }
    }

    /// Sets the trainable flag of every parameter whose name starts with
    /// `prefix`; returns how many matched.
    pub fn set_trainable_prefix(&mut self, prefix: &str, on: bool) -> usize {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.trainable = on;
            n += 1;
        }
        n
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `weight ×` the parameter gradients of one backward pass.
    pub fn accumulate(&mut self, graph: &Graph, grads: &Grads, weight: f64) {
        for (id, g) in graph.param_grads(grads) {
            let e = &mut self.entries[id.0];
            if !e.trainable {
                continue;
            }
            match &mut e.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += weight * b;
                    }
                }
                slot => {
                    let mut t = g.clone();
                    for v in t.data_mut() {
                        *v *= weight;
                    }
                    *slot = Some(t);
                }
            }
        }
    }

    /// One decoupled-weight-decay Adam update. Parameters without a gradient
    /// in this step are left untouched, decay included.
    pub fn adamw_step(&mut self, opt: &AdamW) -> Result<()> {
        if !(opt.lr > 0.0) || !opt.lr.is_finite() {
            return invalid(format!("learning rate must be positive, got {}", opt.lr));
        }
        if !(0.0..1.0).contains(&opt.beta1) || !(0.0..1.0).contains(&opt.beta2) {
            return invalid("AdamW betas must lie in [0, 1)");
        }
        if opt.weight_decay < 0.0 || opt.eps <= 0.0 {
            return invalid("AdamW weight decay must be >= 0 and eps > 0");
        }
        for e in &mut self.entries {
            let Some(g) = e.grad.take() else { continue };
            if !e.trainable {
                continue;
            }
            e.steps += 1;
            let bc1 = 1.0 - opt.beta1.powi(e.steps as i32);
            let bc2 = 1.0 - opt.beta2.powi(e.steps as i32);
            for (((p, m), v), &gv) in e
                .value
                .data_mut()
                .iter_mut()
                .zip(&mut e.m)
                .zip(&mut e.v)
                .zip(g.data())
            {
                *p -= opt.lr * opt.weight_decay * *p;
                *m = opt.beta1 * *m + (1.0 - opt.beta1) * gv;
                *v = opt.beta2 * *v + (1.0 - opt.beta2) * gv * gv;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
            }
            e.value.round_to_f32();
        }
        Ok(())
    }

    /// Copies values of same-named, same-shaped parameters from `other`.
    /// Returns the names that were copied.
    pub fn copy_matching(&mut self, other: &ParamStore) -> Result<Vec<String>> {
        let mut copied = Vec::new();
        for e in &mut self.entries {
            if let Some(&j) = other.by_name.get(&e.name) {
                let src = &other.entries[j].value;
                if src.shape() != e.value.shape() {
                    return invalid(format!(
                        "parameter `{}`: stored shape {:?} does not match model shape {:?}",
                        e.name,
                        src.shape(),
                        e.value.shape()
                    ));
                }
                e.value = src.clone();
                copied.push(e.name.clone());
            }
        }
        Ok(copied)
    }

    /// Writes the values as little-endian `f32` to `path` and a JSON manifest to
    /// `path.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        let mut tensors = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            tensors.push(ManifestEntry {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                offset: bytes.len(),
            });
            for &v in e.value.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            tensors,
            meta: self.meta.clone(),
        };
        fs::File::create(path)?.write_all(&bytes)?;
        fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let manifest: Manifest = serde_json::from_slice(&fs::read(&mpath).map_err(|e| {
            Error::Format(format!("cannot read weights manifest {}: {e}", mpath.display()))
        })?)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!(
                "unknown weights format `{}`",
                manifest.format
            )));
        }
        let bytes = fs::read(path)?;
        let mut store = ParamStore::new();
        let mut expected = 0;
        for t in &manifest.tensors {
            let n: usize = t.shape.iter().product();
            let end = t.offset + 4 * n;
            if t.offset != expected || end > bytes.len() {
                return Err(Error::Format(format!(
                    "tensor `{}` expects bytes {}..{end}, payload has {} bytes",
                    t.name,
                    t.offset,
                    bytes.len()
                )));
            }
            let data = bytes[t.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            store.add(&t.name, Tensor::new(t.shape.clone(), data)?)?;
            expected = end;
        }
        if expected != bytes.len() {
            return Err(Error::Format(format!(
                "weights payload has {} bytes, manifest accounts for {expected}",
                bytes.len()
            )));
        }
        store.meta = manifest.meta;
        Ok(store)
    }
}
