//! Multi-frame fusion attention.
//!
//! Frames of length `L` are viewed as `L/d` tokens of width `d`; previous
//! frames are stacked along the token axis. In the default form each branch
//! pairs its own queries and keys and borrows values from the other side:
//!
//! ```text
//! f̃_cur = softmax(Q_cur·K_curᵀ/√d)·mean_P(V_pre)
//! f̃_pre = mean_P(softmax(Q_pre·K_preᵀ/√d)·tile_P(V_cur))
//! out   = current + γ·Dense([f̃_pre | f̃_cur])
//! ```
//!
//! With `crossed` set, queries attend to the other side's keys instead.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nnkit::{Dense, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfaConfig {
    /// Token width `d`.
    pub dim: usize,
    /// Previous frames attended to, most recent first.
    pub window: usize,
    pub crossed: bool,
    pub gamma_init: f64,
}

impl Default for MfaConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            window: 3,
            crossed: false,
            gamma_init: 0.1,
        }
    }
}

/// Graph handles of one fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct MfaVars {
    pub out: Var,
    /// Attention of the current branch, `[n, n]` or `[n, P·n]` when crossed.
    pub attn_cur: Var,
    /// Attention of the previous branch, `[P·n, P·n]` or `[P·n, n]`.
    pub attn_pre: Var,
}

#[derive(Debug, Clone)]
pub struct Mfa {
    pub cfg: MfaConfig,
    q_cur: Dense,
    k_cur: Dense,
    v_cur: Dense,
    q_pre: Dense,
    k_pre: Dense,
    v_pre: Dense,
    merge: Dense,
    pub gamma: ParamId,
}

impl Mfa {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: MfaConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 || cfg.window == 0 || !cfg.gamma_init.is_finite() {
            return invalid("MFA needs positive dim and window and a finite gamma");
        }
        let d = cfg.dim;
        let mut proj = |name: &str, rng: &mut R| Dense::new(store, &format!("{prefix}.{name}"), d, d, false, rng);
        let (q_cur, k_cur, v_cur) = (proj("q_cur", rng)?, proj("k_cur", rng)?, proj("v_cur", rng)?);
        let (q_pre, k_pre, v_pre) = (proj("q_pre", rng)?, proj("k_pre", rng)?, proj("v_pre", rng)?);
        Ok(Self {
            cfg,
            q_cur,
            k_cur,
            v_cur,
            q_pre,
            k_pre,
            v_pre,
            merge: Dense::new(store, &format!("{prefix}.merge"), 2 * d, d, true, rng)?,
            gamma: store.add(&format!("{prefix}.gamma"), Tensor::new(vec![1], vec![cfg.gamma_init])?)?,
        })
    }

    /// Fuses `current[1, L]` with `previous` (each `[1, L]`, most recent
    /// first; only the first `window` are used).
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, current: Var, previous: &[Var]) -> Result<MfaVars> {
        if previous.is_empty() {
            return invalid("MFA needs at least one previous frame");
        }
        let d = self.cfg.dim;
        let (_, l) = g.value(current).dims2()?;
        if l % d != 0 {
            return invalid(format!("frame length {l} is not a multiple of the token width {d}"));
        }
        let n = l / d;
        let prev = &previous[..previous.len().min(self.cfg.window)];
        let p = prev.len();

        let cur = g.reshape(current, &[n, d])?;
        let mut toks = Vec::with_capacity(p);
        for &f in prev {
            let (_, lf) = g.value(f).dims2()?;
            if lf != l {
                return invalid(format!("previous frame length {lf} differs from current length {l}"));
            }
            toks.push(g.reshape(f, &[n, d])?);
        }
        let pre = g.concat_rows(&toks)?;

        let q_cur = self.q_cur.forward(g, store, cur)?;
        let k_cur = self.k_cur.forward(g, store, cur)?;
        let v_cur = self.v_cur.forward(g, store, cur)?;
        let q_pre = self.q_pre.forward(g, store, pre)?;
        let k_pre = self.k_pre.forward(g, store, pre)?;
        let v_pre = self.v_pre.forward(g, store, pre)?;

        let scale = 1.0 / (d as f64).sqrt();
        let attend = |g: &mut Graph, q: Var, k: Var| -> Result<Var> {
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, scale);
            g.softmax_rows(s)
        };

        let (attn_cur, f_cur, attn_pre, f_pre_all) = if self.cfg.crossed {
            let a_cur = attend(g, q_cur, k_pre)?;
            let f_cur = g.matmul(a_cur, v_pre)?;
            let a_pre = attend(g, q_pre, k_cur)?;
            let f_pre = g.matmul(a_pre, v_cur)?;
            (a_cur, f_cur, a_pre, f_pre)
        } else {
            let a_cur = attend(g, q_cur, k_cur)?;
            let v_pre_mean = frame_mean(g, v_pre, p, n)?;
            let f_cur = g.matmul(a_cur, v_pre_mean)?;
            let a_pre = attend(g, q_pre, k_pre)?;
            let tiled = g.concat_rows(&vec![v_cur; p])?;
            let f_pre = g.matmul(a_pre, tiled)?;
            (a_cur, f_cur, a_pre, f_pre)
        };
        let f_pre = frame_mean(g, f_pre_all, p, n)?;

        let com = g.concat_cols(&[f_pre, f_cur])?;
        let com = self.merge.forward(g, store, com)?;
        let com = g.reshape(com, &[1, l])?;
        let gamma = g.param(store, self.gamma);
        let com = g.mul_scalar(com, gamma)?;
        let out = g.add(current, com)?;
        Ok(MfaVars { out, attn_cur, attn_pre })
    }
}

/// Mean of `p` stacked `[n, d]` blocks.
fn frame_mean(g: &mut Graph, x: Var, p: usize, n: usize) -> Result<Var> {
    if p == 1 {
        return Ok(x);
    }
    let mut acc = g.slice_rows(x, 0, n)?;
    for i in 1..p {
        let s = g.slice_rows(x, i * n, n)?;
        acc = g.add(acc, s)?;
    }
    Ok(g.scale(acc, 1.0 / p as f64))
}
