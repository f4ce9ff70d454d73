//! Motion estimation and compensation coder on semantic frames.
//!
//! Estimation maps `(f, f_ref)` to an offset map `O` of the same length;
//! compensation conditions on `O` next to `f_ref` and predicts `f̄`. The
//! encoder and decoder share this structure with separate weights.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::frame::SemanticFrame;
use crate::nnkit::{Conv1d, Graph, ParamStore, Tensor, Var, LEAKY_SLOPE};

const KERNEL: usize = 3;

#[derive(Debug, Clone)]
pub struct MotionCoder {
    est: [Conv1d; 3],
    comp_in: Conv1d,
    comp_res: [Conv1d; 2],
    head: Conv1d,
}

impl MotionCoder {
    /// The compensation head starts at zero, so an untrained coder predicts
    /// `f̄ = 0`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Result<Self> {
        if width == 0 {
            return invalid("motion coder width must be positive");
        }
        let c = |store: &mut ParamStore, name: &str, i, o, rng: &mut R| {
            Conv1d::new(store, &format!("{prefix}.{name}"), i, o, KERNEL, 1, rng)
        };
        Ok(Self {
            est: [
                c(store, "est0", 2, width, rng)?,
                c(store, "est1", width, width, rng)?,
                c(store, "est2", width, 1, rng)?,
            ],
            comp_in: c(store, "comp0", 2, width, rng)?,
            comp_res: [c(store, "res0", width, width, rng)?, c(store, "res1", width, width, rng)?],
            head: Conv1d::zeros(store, &format!("{prefix}.head"), width, 1, KERNEL)?,
        })
    }

    /// Offset map `O` from `x[1, L]` and `reference[1, L]`.
    pub fn estimate(&self, g: &mut Graph, store: &ParamStore, x: Var, reference: Var) -> Result<Var> {
        let mut h = g.concat_rows(&[x, reference])?;
        for (i, conv) in self.est.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            if i + 1 < self.est.len() {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    /// Prediction from `reference` and an offset map.
    pub fn compensate(&self, g: &mut Graph, store: &ParamStore, reference: Var, offset: Var) -> Result<Var> {
        let x = g.concat_rows(&[reference, offset])?;
        let h = self.comp_in.forward(g, store, x)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        let r = self.comp_res[0].forward(g, store, h)?;
        let r = g.leaky_relu(r, LEAKY_SLOPE);
        let r = self.comp_res[1].forward(g, store, r)?;
        let h = g.add(h, r)?;
        let h = g.leaky_relu(h, LEAKY_SLOPE);
        self.head.forward(g, store, h)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, reference: Var) -> Result<Var> {
        let (_, lx) = g.value(x).dims2()?;
        let (_, lr) = g.value(reference).dims2()?;
        if lx != lr {
            return invalid(format!("motion coder: frame length {lx} vs reference length {lr}"));
        }
        let o = self.estimate(g, store, x, reference)?;
        self.compensate(g, store, reference, o)
    }

    /// Predicted frame for concrete inputs.
    pub fn predict(&self, store: &ParamStore, x: &SemanticFrame, reference: &SemanticFrame) -> Result<SemanticFrame> {
        x.check_len(reference, "motion coder")?;
        let mut g = Graph::new();
        let xv = g.constant(Tensor::row(x.as_slice().to_vec()));
        let rv = g.constant(Tensor::row(reference.as_slice().to_vec()));
        let y = self.forward(&mut g, store, xv, rv)?;
        SemanticFrame::new(g.value(y).data().to_vec())
    }
}

/// `r = f − f̄`.
pub fn residual(f: &SemanticFrame, predicted: &SemanticFrame) -> Result<SemanticFrame> {
    f.sub(predicted)
}
