//! Reconstruction and diffusion objectives.

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Result};
use crate::frame::SemanticFrame;
use crate::models::Wvsc;
use crate::nnkit::{Graph, Tensor, Var};
use crate::rng::normal_vec;

use super::gop::{GopBundle, GopPass};

/// Mean over GoPs and frames of the per-frame pixel MSE, with pixels scaled
/// to `[0, 1]`.
pub fn loss_reconstruction(batch: &[GopBundle]) -> Result<f64> {
    if batch.is_empty() {
        return invalid("reconstruction loss needs at least one GoP");
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for b in batch {
        for (x, y) in b.frames.iter().zip(&b.decoded) {
            total += frame_mse(x, y)?;
            count += 1;
        }
    }
    if count == 0 {
        return invalid("reconstruction loss needs at least one frame");
    }
    Ok(total / count as f64)
}

pub fn frame_mse(x: &[u8], y: &[u8]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return invalid(format!("frame sizes differ: {} vs {}", x.len(), y.len()));
    }
    let s: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = (a as f64 - b as f64) / 255.0;
            d * d
        })
        .sum();
    Ok(s / x.len() as f64)
}

/// Differentiable reconstruction loss of one GoP pass, computed in the
/// transform domain. Equals the pre-quantization pixel MSE on `[0, 1]`
/// pixels, dropped coefficients included.
pub(crate) fn reconstruction_graph(g: &mut Graph, pass: &GopPass, pixels: usize) -> Result<Var> {
    let n = pass.decoded.len();
    let mut acc: Option<Var> = None;
    for i in 0..n {
        let d = g.sub(pass.decoded[i], pass.coeffs[i])?;
        let e = g.sum_sq(d);
        acc = Some(match acc {
            Some(a) => g.add(a, e)?,
            None => e,
        });
    }
    let dropped: f64 = pass.dropped.iter().sum();
    let c = g.constant(Tensor::scalar(dropped));
    let total = g.add(acc.expect("non-empty GoP"), c)?;
    Ok(g.scale(total, 1.0 / (n * pixels) as f64))
}

/// Networks evaluated by [`loss_diffusion`].
pub trait DiffusionNets {
    fn base(&self, g: &mut Graph, z: Var, t: usize) -> Result<Var>;
    /// `frame` is the GoP index of the P frame (1-based offset from the
    /// reference), for predictors that need it.
    fn residual(&self, g: &mut Graph, z: Var, previous: &[Var], t: usize, frame: usize) -> Result<Var>;
}

impl DiffusionNets for Wvsc {
    fn base(&self, g: &mut Graph, z: Var, t: usize) -> Result<Var> {
        self.base_forward(g, z, t)
    }

    fn residual(&self, g: &mut Graph, z: Var, previous: &[Var], t: usize, _frame: usize) -> Result<Var> {
        self.residual_forward(g, z, previous, t)
    }
}

/// Random draw of one diffusion-loss evaluation: a step shared by the GoP,
/// base noise `b` for the reference and residual noises `ρ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionDraw {
    pub t: usize,
    pub base: SemanticFrame,
    pub residual: Vec<SemanticFrame>,
}

impl DiffusionDraw {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, frames: usize, len: usize, total_steps: usize) -> Result<Self> {
        if frames == 0 || total_steps == 0 {
            return invalid("diffusion draw needs frames and steps");
        }
        let t = rng.random_range(1..=total_steps);
        let base = SemanticFrame::new(normal_vec(rng, len))?;
        let residual = (1..frames)
            .map(|_| SemanticFrame::new(normal_vec(rng, len)))
            .collect::<Result<_>>()?;
        Ok(Self { t, base, residual })
    }

    /// `ε^i = √λ·b + √(1−λ)·ρ_i` for P frame `i ≥ 1`.
    pub fn p_noise(&self, i: usize, lambda: f64) -> SemanticFrame {
        self.base.lin_comb(lambda.sqrt(), &self.residual[i - 1], (1.0 - lambda).sqrt())
    }
}

/// Per-frame diffusion loss terms of one GoP, before averaging.
#[derive(Debug, Clone)]
pub struct DiffusionTerms {
    pub reference: Var,
    pub p_frames: Vec<Var>,
}

/// Diffusion loss of one GoP: the mean of [`diffusion_terms`].
#[allow(clippy::too_many_arguments)]
pub fn loss_diffusion<N: DiffusionNets + ?Sized>(
    g: &mut Graph,
    nets: &N,
    semantic: &[SemanticFrame],
    residuals: &[SemanticFrame],
    draw: &DiffusionDraw,
    lambda: f64,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> Result<Var> {
    let terms = diffusion_terms(g, nets, semantic, residuals, draw, lambda, sched, chan)?;
    let mut total = terms.reference;
    for t in terms.p_frames {
        total = g.add(total, t)?;
    }
    Ok(g.scale(total, 1.0 / semantic.len() as f64))
}

/// Diffusion loss terms of one GoP.
///
/// `semantic[0]` is the reference frame and `residuals[i-1]` the normalized
/// residual of frame `i`. The reference term is `mse(ε_ref(z_t^ref), b)`; each
/// P term is `mse(√λ·[ε_ref]_sg + √(1−λ)·φ(z'_t), ε^i)` with `z'_t` the P sample
/// minus the stop-gradient base contribution. Conditioning frames are the
/// clean previous semantic frames, most recent first.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_terms<N: DiffusionNets + ?Sized>(
    g: &mut Graph,
    nets: &N,
    semantic: &[SemanticFrame],
    residuals: &[SemanticFrame],
    draw: &DiffusionDraw,
    lambda: f64,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> Result<DiffusionTerms> {
    if semantic.is_empty() || residuals.len() + 1 != semantic.len() || draw.residual.len() != residuals.len() {
        return invalid(format!(
            "diffusion loss: {} frames, {} residuals, {} residual noises",
            semantic.len(),
            residuals.len(),
            draw.residual.len()
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return invalid(format!("lambda must lie in [0, 1], got {lambda}"));
    }
    let t = draw.t;
    if t == 0 || t > sched.total_steps() {
        return invalid(format!("timestep {t} outside [1, {}]", sched.total_steps()));
    }
    let ab = sched.alpha_bar(t);
    let forward = |clean: &SemanticFrame, eps: &SemanticFrame| -> Result<SemanticFrame> {
        let zs = chan.apply_signal_gain(clean)?;
        crate::diffusion::forward_sample(&zs, t, eps, chan, sched)
    };

    let z_ref = forward(&semantic[0], &draw.base)?;
    let zv = g.constant(Tensor::row(z_ref.into_vec()));
    let b_hat = nets.base(g, zv, t)?;
    let b = g.constant(Tensor::row(draw.base.as_slice().to_vec()));
    let reference = g.mse(b_hat, b)?;
    let mut p_frames = Vec::with_capacity(residuals.len());

    let b_sg = g.stop_gradient(b_hat);
    let (wl, wr) = (lambda.sqrt(), (1.0 - lambda).sqrt());
    let removal: Vec<f64> = chan.hn().iter().map(|h| wl * (1.0 - ab).sqrt() * h).collect();
    let removal = g.constant(Tensor::row(removal));
    let base_part = g.mul(b_sg, removal)?;
    let base_weighted = g.scale(b_sg, wl);

    for i in 1..semantic.len() {
        let fp = crate::ddmfc::compose_p_frame(&semantic[0], &residuals[i - 1], lambda)?;
        let eps = draw.p_noise(i, lambda);
        let z = forward(&fp, &eps)?;
        let zv = g.constant(Tensor::row(z.into_vec()));
        let pred = if lambda == 1.0 {
            base_weighted
        } else {
            let z_prime = g.sub(zv, base_part)?;
            let prev: Vec<Var> = semantic[1..i]
                .iter()
                .rev()
                .chain(if i == 1 { &semantic[..1] } else { &[][..] })
                .map(|f| g.constant(Tensor::row(f.as_slice().to_vec())))
                .collect();
            let phi = nets.residual(g, z_prime, &prev, t, i)?;
            let phi = g.scale(phi, wr);
            g.add(base_weighted, phi)?
        };
        let target = g.constant(Tensor::row(eps.into_vec()));
        p_frames.push(g.mse(pred, target)?);
    }
    Ok(DiffusionTerms { reference, p_frames })
}
