//! Central finite differences for gradient verification.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::Result;

/// Numerical gradient of `f` at `x` with step `h`.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(out)
}

/// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &Tensor, b: &Tensor, floor: f64) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares the backward-pass gradient of every trainable parameter in
/// `store` with central differences. `loss` builds the scalar loss from a
/// store. Returns `(name, max relative error)` per parameter.
pub fn param_grad_errors(
    store: &ParamStore,
    h: f64,
    floor: f64,
    loss: impl Fn(&ParamStore) -> Result<(Graph, Var)>,
) -> Result<Vec<(String, f64)>> {
    let (g, l) = loss(store)?;
    let grads = g.backward(l)?;
    let mut probe = store.clone();
    let mut out = Vec::new();
    for id in store.ids().filter(|&id| store.is_trainable(id)) {
        let analytic = match g.param_var(id).and_then(|v| grads.of(v)) {
            Some(t) => t.clone(),
            None => Tensor::zeros(store.value(id).shape()),
        };
        let numeric = numeric_grad(store.value(id), h, |t| {
            probe.set_value_unrounded(id, t.clone());
            let (g, l) = loss(&probe)?;
            Ok(g.value(l).data()[0])
        })?;
        probe.set_value_unrounded(id, store.value(id).clone());
        out.push((store.name(id).to_string(), max_rel_error(&analytic, &numeric, floor)));
    }
    Ok(out)
}
