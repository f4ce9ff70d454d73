//! One-dimensional U-Net with two resolution levels and a sinusoidal timestep
//! embedding added after the first convolution.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::nnkit::{Conv1d, Dense, Graph, ParamStore, Tensor, Var, LEAKY_SLOPE};

const KERNEL: usize = 3;

/// Sinusoidal embedding of `t`, `[sin(t·ω_i), cos(t·ω_i)]` with
/// `ω_i = 10000^(−2i/dim)`.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = (-(10000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

#[derive(Debug, Clone)]
pub struct UNet {
    width: usize,
    time_dim: usize,
    time: Dense,
    c_in: Conv1d,
    c_skip: Conv1d,
    down1: Conv1d,
    down2: Conv1d,
    mid: Conv1d,
    up1: Conv1d,
    up2: Conv1d,
    out: Conv1d,
}

impl UNet {
    /// Widths `width` and `2·width`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || time_dim == 0 || time_dim % 2 != 0 {
            return invalid(format!(
                "U-Net needs positive width and an even time embedding, got {width} and {time_dim}"
            ));
        }
        let w2 = 2 * width;
        let n = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            width,
            time_dim,
            time: Dense::new(store, &n("time"), time_dim, width, true, rng)?,
            c_in: Conv1d::new(store, &n("in"), 1, width, KERNEL, 1, rng)?,
            c_skip: Conv1d::new(store, &n("skip"), width, width, KERNEL, 1, rng)?,
            down1: Conv1d::new(store, &n("down1"), width, w2, KERNEL, 2, rng)?,
            down2: Conv1d::new(store, &n("down2"), w2, w2, KERNEL, 2, rng)?,
            mid: Conv1d::new(store, &n("mid"), w2, w2, KERNEL, 1, rng)?,
            up1: Conv1d::new(store, &n("up1"), 2 * w2, w2, KERNEL, 1, rng)?,
            up2: Conv1d::new(store, &n("up2"), w2 + width, width, KERNEL, 1, rng)?,
            out: Conv1d::new(store, &n("out"), width, 1, KERNEL, 1, rng)?,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Noise estimate for `x[1, L]` at step `t`; `L` must be a multiple of 4.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, t: usize) -> Result<Var> {
        let (c, l) = g.value(x).dims2()?;
        if c != 1 || l == 0 || l % 4 != 0 {
            return invalid(format!("U-Net input must be [1, L] with L a multiple of 4, got [{c}, {l}]"));
        }
        let act = |g: &mut Graph, v: Var| g.leaky_relu(v, LEAKY_SLOPE);

        let emb = g.constant(Tensor::row(timestep_embedding(t, self.time_dim)));
        let emb = self.time.forward(g, store, emb)?;

        let h = self.c_in.forward(g, store, x)?;
        let h = act(g, h);
        let h = g.add_channel_bias(h, emb)?;
        let s1 = self.c_skip.forward(g, store, h)?;
        let s1 = act(g, s1);

        let s2 = self.down1.forward(g, store, s1)?;
        let s2 = act(g, s2);
        let h = self.down2.forward(g, store, s2)?;
        let h = act(g, h);
        let h = self.mid.forward(g, store, h)?;
        let h = act(g, h);

        let h = g.upsample2(h)?;
        let h = g.concat_rows(&[h, s2])?;
        let h = self.up1.forward(g, store, h)?;
        let h = act(g, h);
        let h = g.upsample2(h)?;
        let h = g.concat_rows(&[h, s1])?;
        let h = self.up2.forward(g, store, h)?;
        let h = act(g, h);
        self.out.forward(g, store, h)
    }
}
