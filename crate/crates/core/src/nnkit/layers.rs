use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Negative slope shared by every LeakyReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

/// He-normal initialisation for a layer with `fan_in` inputs.
pub fn he_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

/// `y = x·W + b` on `x[n, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = he_normal(rng, &[inputs, outputs], inputs);
        Self::from_weight(store, name, w, bias)
    }

    pub fn from_weight(store: &mut ParamStore, name: &str, w: Tensor, bias: bool) -> Result<Self> {
        let (_, outputs) = w.dims2()?;
        let w = store.add(&format!("{name}.w"), w)?;
        let b = if bias {
            Some(store.add(&format!("{name}.b"), Tensor::zeros(&[outputs]))?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Convolution over `x[c_in, l]` with a per-channel bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = he_normal(rng, &[c_out, c_in, kernel], c_in * kernel);
        Self::from_weight(store, name, w, stride)
    }

    /// Same-length convolution (for stride 1) with zero initial weights.
    pub fn zeros(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Self::from_weight(store, name, Tensor::zeros(&[c_out, c_in, kernel]), 1)
    }

    pub fn from_weight(store: &mut ParamStore, name: &str, w: Tensor, stride: usize) -> Result<Self> {
        let c_out = w.shape()[0];
        let kernel = w.shape()[2];
        let w = store.add(&format!("{name}.w"), w)?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[c_out]))?;
        Ok(Self {
            w,
            b,
            stride,
            pad: kernel / 2,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.conv1d(x, w, self.stride, self.pad)?;
        g.add_channel_bias(y, b)
    }
}
