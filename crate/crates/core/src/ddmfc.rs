//! Decoupled diffusion multi-frame compensation.
//!
//! Each P frame's diffusion target is split into a shared base (the
//! reference frame) and a per-frame residual,
//! `f_p = √λ·f_ref + √(1−λ)·r`, and its noise likewise into the base noise of
//! the reference chain and a learned residual noise,
//! `ε = √λ·ε_ref + √(1−λ)·φ`. The reference chain runs once per GoP and its
//! noise estimates are cached and reused by every P-frame chain.

use rand::Rng;

use crate::channel::ChannelRealization;
use crate::diffusion::{reverse_update, steering_term, NoisePredictor, NoiseSchedule, SteeringConfig};
use crate::error::{invalid, Result};
use crate::frame::SemanticFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct CompensationParams {
    /// Base/residual weight λ in `[0, 1]`.
    pub lambda: f64,
    pub steering: SteeringConfig,
    /// Reverse-step standard deviation σ_t.
    pub sigma_t: f64,
    /// Number of reverse steps `m`; 0 skips sampling.
    pub start_step: usize,
}

impl Default for CompensationParams {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            steering: SteeringConfig::mse(0.3),
            sigma_t: 0.0,
            start_step: 10,
        }
    }
}

impl CompensationParams {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        check_lambda(self.lambda)?;
        self.steering.validate()?;
        if !(self.sigma_t >= 0.0) {
            return invalid(format!("sigma_t must be non-negative, got {}", self.sigma_t));
        }
        if self.start_step > sched.total_steps() {
            return invalid(format!(
                "start step {} exceeds schedule length {}",
                self.start_step,
                sched.total_steps()
            ));
        }
        Ok(())
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return invalid(format!("lambda must lie in [0, 1], got {lambda}"));
    }
    Ok(())
}

fn weights(lambda: f64) -> (f64, f64) {
    (lambda.sqrt(), (1.0 - lambda).sqrt())
}

/// `√λ·f_ref + √(1−λ)·r`.
pub fn compose_p_frame(f_ref: &SemanticFrame, r: &SemanticFrame, lambda: f64) -> Result<SemanticFrame> {
    check_lambda(lambda)?;
    f_ref.check_len(r, "compose_p_frame")?;
    let (a, b) = weights(lambda);
    Ok(f_ref.lin_comb(a, r, b))
}

/// Reverse-chain start point built from received frames, normalized by
/// `1/√(1+σ²)` so its marginal matches the forward process at the matched step.
pub fn start_point(
    f_ref_rx: &SemanticFrame,
    r_rx: &SemanticFrame,
    lambda: f64,
    sigma2: f64,
) -> Result<SemanticFrame> {
    if !(sigma2 >= 0.0) {
        return invalid(format!("sigma2 must be non-negative, got {sigma2}"));
    }
    let composed = compose_p_frame(f_ref_rx, r_rx, lambda)?;
    Ok(composed.scaled(1.0 / (1.0 + sigma2).sqrt()))
}

/// `√λ·ε_ref + √(1−λ)·φ`. The reference frame itself uses λ = 1.
pub fn combine_noise(eps_ref: &SemanticFrame, phi: &SemanticFrame, lambda: f64) -> Result<SemanticFrame> {
    check_lambda(lambda)?;
    eps_ref.check_len(phi, "combine_noise")?;
    if lambda == 1.0 {
        return Ok(eps_ref.clone());
    }
    let (a, b) = weights(lambda);
    Ok(eps_ref.lin_comb(a, phi, b))
}

/// `z'_t = z_t − √λ·√(1−ā_t)·(hn ⊙ ε_ref_t)`.
pub fn remove_base_noise(
    z_t: &SemanticFrame,
    eps_ref_t: &SemanticFrame,
    lambda: f64,
    t: usize,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> Result<SemanticFrame> {
    check_lambda(lambda)?;
    sched.check_step(t, 1)?;
    z_t.check_len(eps_ref_t, "remove_base_noise")?;
    chan.check_frame(z_t)?;
    let c = lambda.sqrt() * (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(SemanticFrame::from_raw(
        z_t.as_slice()
            .iter()
            .zip(eps_ref_t.as_slice())
            .zip(chan.hn())
            .map(|((z, e), g)| z - c * g * e)
            .collect(),
    ))
}

/// Base-noise estimates `ε_t^ref` of the reference chain for `t = m..=1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseNoise {
    eps: Vec<SemanticFrame>,
}

impl BaseNoise {
    pub fn steps(&self) -> usize {
        self.eps.len()
    }

    /// `ε_t^ref` for `t = 1..=m`.
    pub fn at(&self, t: usize) -> &SemanticFrame {
        &self.eps[t - 1]
    }

    /// Builds a table from externally known noises, `eps[t-1]` for step `t`.
    pub fn from_table(eps: Vec<SemanticFrame>) -> Self {
        Self { eps }
    }
}

/// Runs the reference chain from `z_m = f̂_ref` with the unconditional reverse
/// step, evaluating `base` exactly `m` times.
pub fn base_chain<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    f_ref_rx: &SemanticFrame,
    base: &P,
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
) -> Result<BaseNoise> {
    params.validate(sched)?;
    chan.check_frame(f_ref_rx)?;
    let m = params.start_step;
    let mut eps = vec![None; m];
    let mut z = f_ref_rx.clone();
    for t in (1..=m).rev() {
        let e = base.predict(&z, t, &[])?;
        z.check_len(&e, "base predictor output")?;
        if t > 1 {
            z = reverse_update(&z, &e, t, chan, sched, params.sigma_t, rng)?;
        }
        eps[t - 1] = Some(e);
    }
    Ok(BaseNoise {
        eps: eps.into_iter().map(|e| e.expect("every step filled")).collect(),
    })
}

/// One P-frame reverse step from `t` to `t − 1`, `t ≥ 2`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step_p<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    z_t: &SemanticFrame,
    z_prime_t: &SemanticFrame,
    eps_ref_t: &SemanticFrame,
    residual: &P,
    previous: &[SemanticFrame],
    params: &CompensationParams,
    t: usize,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
) -> Result<SemanticFrame> {
    if t < 2 {
        return invalid("reverse_step_p needs t >= 2; use final_step at t = 1");
    }
    step_p(z_t, z_prime_t, eps_ref_t, residual, previous, previous, params, t, sched, chan, rng)
        .map(|(z, _, _)| z)
}

/// Returns `(z_{t−1}, φ_t, steering)`. The residual predictor sees `context`;
/// steering targets `history`, and is skipped when it is empty.
#[allow(clippy::too_many_arguments)]
fn step_p<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    z_t: &SemanticFrame,
    z_prime_t: &SemanticFrame,
    eps_ref_t: &SemanticFrame,
    residual: &P,
    context: &[SemanticFrame],
    history: &[SemanticFrame],
    params: &CompensationParams,
    t: usize,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
) -> Result<(SemanticFrame, Option<SemanticFrame>, SemanticFrame)> {
    let phi = residual_noise(z_prime_t, t, residual, context, params.lambda)?;
    let total = match &phi {
        Some(phi) => combine_noise(eps_ref_t, phi, params.lambda)?,
        None => eps_ref_t.clone(),
    };
    let candidate = reverse_update(z_t, &total, t, chan, sched, params.sigma_t, rng)?;
    let steer = if history.is_empty() {
        SemanticFrame::from_raw(vec![0.0; z_t.len()])
    } else {
        steering_term(z_t, history, &params.steering, t)?
    };
    let next = SemanticFrame::new(candidate.lin_comb(1.0, &steer, -1.0).into_vec())?;
    Ok((next, phi, steer))
}

fn residual_noise<P: NoisePredictor + ?Sized>(
    z_prime_t: &SemanticFrame,
    t: usize,
    residual: &P,
    previous: &[SemanticFrame],
    lambda: f64,
) -> Result<Option<SemanticFrame>> {
    // φ carries zero weight at λ = 1.
    if lambda == 1.0 {
        return Ok(None);
    }
    let phi = residual.predict(z_prime_t, t, previous)?;
    z_prime_t.check_len(&phi, "residual predictor output")?;
    Ok(Some(phi))
}

/// Last step: `f̃ = (z_1 − √(1−ā_1)·hn⊙ε_1) / √ā_1`.
#[allow(clippy::too_many_arguments)]
pub fn final_step<P: NoisePredictor + ?Sized>(
    z_1: &SemanticFrame,
    z_prime_1: &SemanticFrame,
    eps_ref_1: &SemanticFrame,
    residual: &P,
    previous: &[SemanticFrame],
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> Result<SemanticFrame> {
    final_step_inner(z_1, z_prime_1, eps_ref_1, residual, previous, params, sched, chan)
        .map(|(f, _)| f)
}

#[allow(clippy::too_many_arguments)]
fn final_step_inner<P: NoisePredictor + ?Sized>(
    z_1: &SemanticFrame,
    z_prime_1: &SemanticFrame,
    eps_ref_1: &SemanticFrame,
    residual: &P,
    previous: &[SemanticFrame],
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> Result<(SemanticFrame, Option<SemanticFrame>)> {
    chan.check_frame(z_1)?;
    let phi = residual_noise(z_prime_1, 1, residual, previous, params.lambda)?;
    let total = match &phi {
        Some(phi) => combine_noise(eps_ref_1, phi, params.lambda)?,
        None => eps_ref_1.clone(),
    };
    z_1.check_len(&total, "final step")?;
    let ab = sched.alpha_bar(1);
    let (noise_c, inv) = ((1.0 - ab).sqrt(), 1.0 / ab.sqrt());
    let out = z_1
        .as_slice()
        .iter()
        .zip(total.as_slice())
        .zip(chan.hn())
        .map(|((z, e), g)| inv * (z - noise_c * g * e))
        .collect();
    Ok((SemanticFrame::new(out)?, phi))
}

/// Per-step diagnostics of a P-frame chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    pub z_t: SemanticFrame,
    pub z_prime_t: SemanticFrame,
    pub base_noise: SemanticFrame,
    pub residual_noise: Option<SemanticFrame>,
    /// Euclidean norm of the steering correction applied at this step.
    pub steering_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DdmfcTrace {
    pub steps: Vec<TraceStep>,
}

/// P-frame chain on top of a cached base-noise table.
///
/// `previous` holds reconstructed frames, most recent first. When it is empty
/// the residual predictor is conditioned on `f̂_ref` and steering is off.
#[allow(clippy::too_many_arguments)]
pub fn sample_p_frame<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    base: &BaseNoise,
    f_ref_rx: &SemanticFrame,
    r_rx: &SemanticFrame,
    previous: &[SemanticFrame],
    residual: &P,
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
    record_trace: bool,
) -> Result<(SemanticFrame, DdmfcTrace)> {
    params.validate(sched)?;
    let m = params.start_step;
    if base.steps() != m {
        return invalid(format!(
            "base-noise table has {} steps but start step is {m}",
            base.steps()
        ));
    }
    let z_m = start_point(f_ref_rx, r_rx, params.lambda, chan.sigma2())?;
    p_chain_from(base, z_m, f_ref_rx, previous, residual, params, sched, chan, rng, record_trace)
}

/// P-frame chain from an explicit start sample `z_m`.
#[allow(clippy::too_many_arguments)]
pub fn p_chain_from<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    base: &BaseNoise,
    z_m: SemanticFrame,
    f_ref_rx: &SemanticFrame,
    previous: &[SemanticFrame],
    residual: &P,
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
    record_trace: bool,
) -> Result<(SemanticFrame, DdmfcTrace)> {
    params.validate(sched)?;
    let m = params.start_step;
    if base.steps() != m {
        return invalid(format!(
            "base-noise table has {} steps but start step is {m}",
            base.steps()
        ));
    }
    chan.check_frame(&z_m)?;
    let mut z = z_m;
    let mut trace = DdmfcTrace::default();
    if m == 0 {
        return Ok((z, trace));
    }
    let fallback = [f_ref_rx.clone()];
    let context: &[SemanticFrame] = if previous.is_empty() { &fallback } else { previous };

    for t in (2..=m).rev() {
        let eps_ref = base.at(t);
        let z_prime = remove_base_noise(&z, eps_ref, params.lambda, t, sched, chan)?;
        let (next, phi, steer) =
            step_p(&z, &z_prime, eps_ref, residual, context, previous, params, t, sched, chan, rng)?;
        if record_trace {
            trace.steps.push(TraceStep {
                t,
                z_t: z.clone(),
                z_prime_t: z_prime,
                base_noise: eps_ref.clone(),
                residual_noise: phi,
                steering_norm: steer.norm_sq().sqrt(),
            });
        }
        z = next;
    }
    let eps_ref = base.at(1);
    let z_prime = remove_base_noise(&z, eps_ref, params.lambda, 1, sched, chan)?;
    let (out, phi) = final_step_inner(&z, &z_prime, eps_ref, residual, context, params, sched, chan)?;
    if record_trace {
        trace.steps.push(TraceStep {
            t: 1,
            z_t: z,
            z_prime_t: z_prime,
            base_noise: eps_ref.clone(),
            residual_noise: phi,
            steering_norm: 0.0,
        });
    }
    Ok((out, trace))
}

/// Compensation of a single P frame: reference chain, then P chain.
#[allow(clippy::too_many_arguments)]
pub fn ddmfc_sample<B, P, R>(
    f_ref_rx: &SemanticFrame,
    r_rx: &SemanticFrame,
    previous: &[SemanticFrame],
    base: &B,
    residual: &P,
    params: &CompensationParams,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
    rng: &mut R,
    record_trace: bool,
) -> Result<(SemanticFrame, DdmfcTrace)>
where
    B: NoisePredictor + ?Sized,
    P: NoisePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let table = base_chain(f_ref_rx, base, params, sched, chan, rng)?;
    sample_p_frame(&table, f_ref_rx, r_rx, previous, residual, params, sched, chan, rng, record_trace)
}
