//! Diffusion schedule, the channel-aligned forward process and the
//! deterministic reverse update, plus energy-based steering toward previously
//! reconstructed frames.
//!
//! All updates scale noise by the equalizer noise gain `hn`, so the forward
//! process at step `m` matches the statistics of an equalized received frame.

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::error::{invalid, Result};
use crate::frame::SemanticFrame;
use crate::rng::normal_vec;

/// Linear-β noise schedule. `alpha_bar(0) = 1` so step 0 means "clean".
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    /// `alpha_bars[t]` for `t = 0..=T`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total_steps == 0 {
            return invalid("total_steps must be at least 1");
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return invalid(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            ));
        }
        let betas: Vec<f64> = if total_steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (total_steps - 1) as f64;
            (0..total_steps).map(|i| beta_start + step * i as f64).collect()
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(total_steps + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(Self { alphas, alpha_bars })
    }

    pub fn total_steps(&self) -> usize {
        self.alphas.len()
    }

    /// `a_t` for `t = 1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alphas[t - 1]
    }

    /// `ā_t` for `t = 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.total_steps() {
            return invalid(format!(
                "timestep {t} outside [{lo}, {}]",
                self.total_steps()
            ));
        }
        Ok(())
    }

    /// Start step whose forward marginal matches an equalized received frame
    /// normalized by `1/√(1+σ²)`: the `m` minimizing `|ā_m − 1/(1+σ²)|`,
    /// ties toward the smaller `m`.
    pub fn find_start_step(&self, sigma2: f64) -> usize {
        let target = 1.0 / (1.0 + sigma2.max(0.0));
        let mut best = 0;
        let mut best_gap = f64::INFINITY;
        for (m, &ab) in self.alpha_bars.iter().enumerate() {
            let gap = (ab - target).abs();
            if gap < best_gap {
                best = m;
                best_gap = gap;
            }
        }
        best
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `z_t = √ā_t·z_start + √(1−ā_t)·(hn ⊙ eps)`; `t = 0` returns `z_start`.
pub fn forward_sample(
    z_start: &SemanticFrame,
    t: usize,
    eps: &SemanticFrame,
    chan: &ChannelRealization,
    sched: &NoiseSchedule,
) -> Result<SemanticFrame> {
    sched.check_step(t, 0)?;
    z_start.check_len(eps, "forward_sample")?;
    chan.check_frame(z_start)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(SemanticFrame::from_raw(
        z_start
            .as_slice()
            .iter()
            .zip(eps.as_slice())
            .zip(chan.hn())
            .map(|((z, e), g)| a * z + b * g * e)
            .collect(),
    ))
}

/// Estimated-noise model `ε(z_t, t, context)`.
///
/// `context` holds previously reconstructed frames, most recent first; base
/// predictors ignore it.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        z: &SemanticFrame,
        t: usize,
        context: &[SemanticFrame],
    ) -> Result<SemanticFrame>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, z: &SemanticFrame, t: usize, context: &[SemanticFrame]) -> Result<SemanticFrame> {
        (**self).predict(z, t, context)
    }
}

/// Predictor that always returns the same noise vector. With the noise used to
/// build `z_t` it makes the reverse chain exactly invertible.
#[derive(Debug, Clone)]
pub struct ConstantNoise(pub SemanticFrame);

impl NoisePredictor for ConstantNoise {
    fn predict(&self, z: &SemanticFrame, _t: usize, _c: &[SemanticFrame]) -> Result<SemanticFrame> {
        z.check_len(&self.0, "constant predictor")?;
        Ok(self.0.clone())
    }
}

/// One deterministic-plus-σ reverse update given an already-predicted noise.
///
/// ```text
/// z_{t−1} = √ā_{t−1}·(z_t − √(1−ā_t)·hn⊙ε)/√ā_t + √(1−ā_{t−1}−σ_t²)·hn⊙ε + σ_t·ξ
/// ```
pub(crate) fn reverse_update<R: Rng + ?Sized>(
    z_t: &SemanticFrame,
    eps: &SemanticFrame,
    t: usize,
    chan: &ChannelRealization,
    sched: &NoiseSchedule,
    sigma_t: f64,
    rng: &mut R,
) -> Result<SemanticFrame> {
    sched.check_step(t, 1)?;
    z_t.check_len(eps, "reverse step")?;
    chan.check_frame(z_t)?;
    if !(sigma_t >= 0.0) {
        return invalid(format!("sigma_t must be non-negative, got {sigma_t}"));
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let dir_var = 1.0 - ab_prev - sigma_t * sigma_t;
    if dir_var < 0.0 {
        return invalid(format!(
            "sigma_t^2 = {} exceeds 1 - alpha_bar_(t-1) = {}",
            sigma_t * sigma_t,
            1.0 - ab_prev
        ));
    }
    let x0_noise = (1.0 - ab_t).sqrt();
    let ratio = (ab_prev / ab_t).sqrt();
    let dir = dir_var.sqrt();
    let mut out: Vec<f64> = z_t
        .as_slice()
        .iter()
        .zip(eps.as_slice())
        .zip(chan.hn())
        .map(|((z, e), g)| ratio * (z - x0_noise * g * e) + dir * g * e)
        .collect();
    if sigma_t > 0.0 {
        for (o, xi) in out.iter_mut().zip(normal_vec(rng, z_t.len())) {
            *o += sigma_t * xi;
        }
    }
    SemanticFrame::new(out)
}

/// Unconditional reverse step driven by `predictor`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_reference<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    z_t: &SemanticFrame,
    t: usize,
    predictor: &P,
    chan: &ChannelRealization,
    sched: &NoiseSchedule,
    sigma_t: f64,
    rng: &mut R,
) -> Result<SemanticFrame> {
    sched.check_step(t, 1)?;
    let eps = predictor.predict(z_t, t, &[])?;
    reverse_update(z_t, &eps, t, chan, sched, sigma_t, rng)
}

/// Steering scale `k(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum StepScale {
    Constant(f64),
    /// `table[t-1]` for `t = 1..`; steps beyond the table reuse the last entry.
    Table(Vec<f64>),
}

impl StepScale {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            StepScale::Constant(k) => *k,
            StepScale::Table(v) => v
                .get(t.saturating_sub(1))
                .or(v.last())
                .copied()
                .unwrap_or(0.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepScale::Constant(k) => *k >= 0.0,
            StepScale::Table(v) => v.iter().all(|k| *k >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            invalid("steering scale k(t) must be non-negative")
        }
    }
}

/// Energy on the current sample `z_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurrentEnergy {
    /// `(1/L)·‖z − f̂^{i−1}‖²` against the most recent reconstructed frame.
    MsePrevious,
    None,
}

/// Energy on the next sample `z_{t−1}`. Only the zero energy is defined; the
/// hook is evaluated at the pre-steering candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextEnergy {
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringConfig {
    pub k: StepScale,
    pub current: CurrentEnergy,
    pub next: NextEnergy,
}

impl SteeringConfig {
    pub fn mse(k: f64) -> Self {
        Self {
            k: StepScale::Constant(k),
            current: CurrentEnergy::MsePrevious,
            next: NextEnergy::Zero,
        }
    }

    pub fn disabled() -> Self {
        Self::mse(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.k.validate()
    }
}

/// `k(t)·∇_z (V₁(z_t) − V₂(z_{t−1}))`. With `V₁ = MSE` to the most recent
/// frame this is `k(t)·(2/L)·(z_t − f̂^{i−1})`; `V₂ = 0` adds nothing.
pub fn steering_term(
    z_t: &SemanticFrame,
    previous: &[SemanticFrame],
    cfg: &SteeringConfig,
    t: usize,
) -> Result<SemanticFrame> {
    cfg.validate()?;
    let k = cfg.k.at(t);
    let grad = match cfg.current {
        CurrentEnergy::None => vec![0.0; z_t.len()],
        CurrentEnergy::MsePrevious => {
            let Some(target) = previous.first() else {
                return invalid("MSE steering needs at least one previous frame");
            };
            z_t.check_len(target, "steering")?;
            let c = k * 2.0 / z_t.len() as f64;
            z_t.as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(z, f)| c * (z - f))
                .collect()
        }
    };
    match cfg.next {
        NextEnergy::Zero => {}
    }
    Ok(SemanticFrame::from_raw(grad))
}
