//! One GoP through transmitter, shared fading channel and receiver.
//!
//! The whole pass is recorded on a [`Graph`] so training can differentiate
//! the reconstruction loss through the codec and motion coders. Diffusion
//! sampling runs on plain values and enters the graph as a constant.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::channel::ChannelRealization;
use crate::ddmfc::{base_chain, compose_p_frame, sample_p_frame, BaseNoise, CompensationParams, DdmfcTrace};
use crate::diffusion::{ConstantNoise, NoisePredictor, NoiseSchedule};
use crate::error::{invalid, Result, StageContext};
use crate::frame::{power_normalize, SemanticFrame};
use crate::models::Wvsc;
use crate::nnkit::{Graph, Tensor, Var};
use crate::rng::{frame_stream, SimRng};

use super::config::Fading;

const CHANNEL_SLOT: u64 = 0xF_FFFF;
const SAMPLE_SLOT: u64 = 0x8_0000;
const DIFFUSION_SLOT: u64 = 0xF_FFFE;

/// Where the receiver's noise estimates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compensation {
    #[default]
    Learned,
    /// Noise recovered from transmitter-side knowledge, which makes the
    /// chains invert the channel exactly (up to steering).
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GopOptions {
    pub params: CompensationParams,
    pub compensation: Compensation,
    pub record_trace: bool,
}

impl Default for GopOptions {
    fn default() -> Self {
        Self {
            params: CompensationParams::default(),
            compensation: Compensation::Learned,
            record_trace: false,
        }
    }
}

/// Seeds of one GoP; every random draw is derived from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GopSeed {
    pub master: u64,
    pub gop: u64,
}

impl GopSeed {
    fn frame_noise(&self, i: usize) -> SimRng {
        frame_stream(self.master, self.gop, i as u64)
    }

    fn sampling(&self, i: usize) -> SimRng {
        frame_stream(self.master, self.gop, SAMPLE_SLOT + i as u64)
    }

    /// Draws of the training-time diffusion loss.
    pub(crate) fn diffusion(&self) -> SimRng {
        frame_stream(self.master, self.gop, DIFFUSION_SLOT)
    }

    pub fn channel(&self) -> SimRng {
        frame_stream(self.master, self.gop, CHANNEL_SLOT)
    }
}

/// Draws the fading realization shared by all frames of a GoP.
pub fn sample_channel(fading: Fading, len: usize, sigma2: f64, seed: GopSeed) -> Result<ChannelRealization> {
    match fading {
        Fading::Rayleigh => ChannelRealization::sample(&mut seed.channel(), len, sigma2),
        Fading::Awgn => {
            let mut c = ChannelRealization::identity(len)?;
            if sigma2 > 0.0 {
                c = ChannelRealization::new(c.taps().to_vec(), sigma2)?;
            }
            Ok(c)
        }
    }
}

/// Per-P-frame transmitter and receiver intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct PFrame {
    /// `f̄`, the transmitter's motion-compensated prediction.
    pub predicted: SemanticFrame,
    /// `r = f − f̄`.
    pub residual: SemanticFrame,
    /// Side information: `r` is sent as `r / residual_scale`.
    pub residual_scale: f64,
    /// `r̂` after equalization and rescaling.
    pub received_residual: SemanticFrame,
    /// `f̃`, the diffusion output.
    pub compensated: SemanticFrame,
    /// `f̌`, the receiver's motion reconstruction.
    pub motion_rx: SemanticFrame,
    pub trace: Option<DdmfcTrace>,
}

#[derive(Debug, Clone)]
pub struct GopBundle {
    pub frames: Vec<Vec<u8>>,
    /// `f^i`, unit symbol power; index 0 is the reference.
    pub semantic: Vec<SemanticFrame>,
    /// Side information: frame `i` decodes from `f̂^i · scales[i]`.
    pub scales: Vec<f64>,
    /// Frames `2..=I`.
    pub p_frames: Vec<PFrame>,
    pub channel: Arc<ChannelRealization>,
    pub received_ref: SemanticFrame,
    /// `f̂^i`; index 0 equals `received_ref`.
    pub reconstructed: Vec<SemanticFrame>,
    pub decoded: Vec<Vec<u8>>,
    /// Base-predictor evaluations spent on this GoP.
    pub base_calls: usize,
}

impl GopBundle {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Complex channel uses: `L/2` per frame.
    pub fn channel_symbols(&self) -> usize {
        self.frames.len() * self.received_ref.len() / 2
    }
}

struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: NoisePredictor> NoisePredictor for Counting<P> {
    fn predict(&self, z: &SemanticFrame, t: usize, c: &[SemanticFrame]) -> Result<SemanticFrame> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(z, t, c)
    }
}

/// Graph handles and side values of one GoP pass.
pub(crate) struct GopPass {
    /// Kept DCT coefficients of each frame (constants).
    pub coeffs: Vec<Var>,
    /// Energy of the dropped coefficients, per frame.
    pub dropped: Vec<f64>,
    pub semantic: Vec<Var>,
    pub scales: Vec<f64>,
    pub predicted: Vec<Var>,
    pub residuals: Vec<Var>,
    pub residual_scales: Vec<f64>,
    pub received_ref: Var,
    pub received_residuals: Vec<Var>,
    pub compensated: Vec<SemanticFrame>,
    pub motion_rx: Vec<Var>,
    pub reconstructed: Vec<Var>,
    /// Decoded coefficients of each frame.
    pub decoded: Vec<Var>,
    pub traces: Vec<Option<DdmfcTrace>>,
    pub base_calls: usize,
}

fn frame_of(g: &Graph, v: Var) -> Result<SemanticFrame> {
    SemanticFrame::new(g.value(v).data().to_vec())
}

fn row(f: &SemanticFrame) -> Tensor {
    Tensor::row(f.as_slice().to_vec())
}

/// `x / s`, with the scale treated as a constant.
fn normalize(g: &mut Graph, x: Var) -> Result<(Var, f64)> {
    let (_, s) = power_normalize(g.value(x).data())?;
    let inv = if s > 0.0 { 1.0 / s } else { 0.0 };
    Ok((g.scale(x, inv), s))
}

/// `hs ⊙ x + hn ⊙ n` on the graph, with `n` drawn from `rng`.
fn through_channel(g: &mut Graph, chan: &ChannelRealization, x: Var, rng: &mut SimRng) -> Result<(Var, Vec<f64>)> {
    let f = frame_of(g, x)?;
    let (_, noise) = chan.transmit_with_noise(&f, rng)?;
    let hs = g.constant(Tensor::row(chan.hs().to_vec()));
    let hn_n: Vec<f64> = chan.hn().iter().zip(&noise).map(|(h, n)| h * n).collect();
    let hn_n = g.constant(Tensor::row(hn_n));
    let y = g.mul(x, hs)?;
    Ok((g.add(y, hn_n)?, noise))
}

/// Noise that places the normalized received frame `rx/√(1+σ²)` on the
/// forward trajectory from `hs ⊙ clean` at step `m`.
fn oracle_noise(
    clean: &SemanticFrame,
    rx: &SemanticFrame,
    m: usize,
    sched: &NoiseSchedule,
    chan: &ChannelRealization,
) -> SemanticFrame {
    let ab = sched.alpha_bar(m);
    let (a, c) = (ab.sqrt(), (1.0 - ab).sqrt());
    let norm = 1.0 / (1.0 + chan.sigma2()).sqrt();
    let out = clean
        .as_slice()
        .iter()
        .zip(rx.as_slice())
        .zip(chan.hs().iter().zip(chan.hn()))
        .map(|((x, y), (s, h))| {
            let d = c * h;
            if d > 0.0 {
                (norm * y - a * s * x) / d
            } else {
                0.0
            }
        })
        .collect();
    SemanticFrame::new(out).expect("finite oracle noise")
}

/// Transmitter side: semantic frames, residuals, channel.
pub(crate) fn run_gop(
    model: &Wvsc,
    g: &mut Graph,
    frames: &[&[u8]],
    chan: &ChannelRealization,
    sched: &NoiseSchedule,
    opts: &GopOptions,
    seed: GopSeed,
) -> Result<GopPass> {
    if frames.is_empty() {
        return invalid("GoP has no frames");
    }
    let store = &model.store;
    let codec = &model.codec;
    let n = frames.len();
    let l = model.cfg.code_len();
    if chan.len() != l {
        return invalid(format!("channel serves length {}, model code length is {l}", chan.len()));
    }

    let mut coeffs = Vec::with_capacity(n);
    let mut dropped = Vec::with_capacity(n);
    let mut semantic = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n);
    for &x in frames {
        let (c, energy) = encode_input(model, x).stage("semantic_encode")?;
        let cv = g.constant(c);
        let y = codec.project(g, store, cv).stage("semantic_encode")?;
        let (f, s) = normalize(g, y).stage("semantic_encode")?;
        coeffs.push(cv);
        dropped.push(energy);
        semantic.push(f);
        scales.push(s);
    }

    let f_ref = semantic[0];
    let mut predicted = Vec::with_capacity(n - 1);
    let mut residuals = Vec::with_capacity(n - 1);
    let mut residual_scales = Vec::with_capacity(n - 1);
    let mut residuals_n = Vec::with_capacity(n - 1);
    for &f in &semantic[1..] {
        let fbar = model
            .motion_enc
            .forward(g, store, f, f_ref)
            .stage("motion_encode")?;
        let r = g.sub(f, fbar).stage("motion_encode")?;
        let (rn, s) = normalize(g, r).stage("motion_encode")?;
        predicted.push(fbar);
        residuals.push(r);
        residual_scales.push(s);
        residuals_n.push(rn);
    }

    let (received_ref, _) = through_channel(g, chan, f_ref, &mut seed.frame_noise(0)).stage("channel")?;
    let mut received_n = Vec::with_capacity(n - 1);
    let mut received_residuals = Vec::with_capacity(n - 1);
    for (i, (&rn, &s)) in residuals_n.iter().zip(&residual_scales).enumerate() {
        let (y, _) = through_channel(g, chan, rn, &mut seed.frame_noise(i + 1)).stage("channel")?;
        received_n.push(y);
        received_residuals.push(g.scale(y, s));
    }

    let params = &opts.params;
    let f_ref_rx = frame_of(g, received_ref).stage("channel")?;
    let f_ref_clean = frame_of(g, f_ref)?;
    let base_calls;
    let table: BaseNoise = {
        let mut rng = seed.sampling(0);
        let run = |p: &dyn NoisePredictor, rng: &mut SimRng| base_chain(&f_ref_rx, p, params, sched, chan, rng);
        match opts.compensation {
            Compensation::Learned => {
                let p = Counting { inner: model.base_predictor(), calls: AtomicUsize::new(0) };
                let t = if n > 1 { run(&p, &mut rng) } else { Ok(BaseNoise::from_table(vec![])) };
                base_calls = p.calls.load(Ordering::Relaxed);
                t
            }
            Compensation::Oracle => {
                let eps = if params.start_step > 0 {
                    oracle_noise(&f_ref_clean, &f_ref_rx, params.start_step, sched, chan)
                } else {
                    SemanticFrame::zeros(l)?
                };
                let p = Counting { inner: ConstantNoise(eps), calls: AtomicUsize::new(0) };
                let t = if n > 1 { run(&p, &mut rng) } else { Ok(BaseNoise::from_table(vec![])) };
                base_calls = p.calls.load(Ordering::Relaxed);
                t
            }
        }
        .stage("base_chain")?
    };

    let s_ref = scales[0];
    let scaled = g.scale(received_ref, s_ref);
    let mut decoded = vec![codec.unproject(g, store, scaled).stage("semantic_decode")?];
    let mut reconstructed = vec![received_ref];
    let mut compensated = Vec::with_capacity(n - 1);
    let mut motion_rx = Vec::with_capacity(n - 1);
    let mut traces = Vec::with_capacity(n - 1);
    // Most recent first.
    let mut history: Vec<SemanticFrame> = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let r_rx_n = frame_of(g, received_n[i]).stage("ddmfc")?;
        let mut rng = seed.sampling(i + 1);
        let (f_tilde, trace) = match opts.compensation {
            Compensation::Learned => sample_p_frame(
                &table,
                &f_ref_rx,
                &r_rx_n,
                &history,
                &model.residual_predictor(),
                params,
                sched,
                chan,
                &mut rng,
                opts.record_trace,
            ),
            Compensation::Oracle => {
                let r_clean = frame_of(g, residuals_n[i])?;
                let phi = if params.start_step > 0 {
                    oracle_noise(&r_clean, &r_rx_n, params.start_step, sched, chan)
                } else {
                    SemanticFrame::zeros(l)?
                };
                sample_p_frame(
                    &table,
                    &f_ref_rx,
                    &r_rx_n,
                    &history,
                    &ConstantNoise(phi),
                    params,
                    sched,
                    chan,
                    &mut rng,
                    opts.record_trace,
                )
            }
        }
        .stage("ddmfc")?;

        let ft = g.constant(row(&f_tilde));
        let fcheck = model
            .motion_dec
            .forward(g, store, ft, received_ref)
            .stage("motion_decode")?;
        let fhat = g.add(fcheck, received_residuals[i]).stage("motion_decode")?;
        let scaled = g.scale(fhat, scales[i + 1]);
        decoded.push(codec.unproject(g, store, scaled).stage("semantic_decode")?);
        history.insert(0, frame_of(g, fhat).stage("motion_decode")?);
        compensated.push(f_tilde);
        motion_rx.push(fcheck);
        reconstructed.push(fhat);
        traces.push(opts.record_trace.then_some(trace));
    }

    Ok(GopPass {
        coeffs,
        dropped,
        semantic,
        scales,
        predicted,
        residuals,
        residual_scales,
        received_ref,
        received_residuals,
        compensated,
        motion_rx,
        reconstructed,
        decoded,
        traces,
        base_calls,
    })
}

/// Kept coefficients and the energy of the dropped ones.
fn encode_input(model: &Wvsc, x: &[u8]) -> Result<(Tensor, f64)> {
    let kept = model.codec.analyze(x)?;
    // The transform is orthonormal, so total energy is the pixel energy.
    let total: f64 = x.iter().map(|&v| (v as f64 / 255.0 - 0.5).powi(2)).sum();
    let kept_energy: f64 = kept.data().iter().map(|v| v * v).sum();
    Ok((kept, (total - kept_energy).max(0.0)))
}

/// Sends one GoP and reconstructs it at the receiver. Frame 0 is the
/// reference; a single-frame GoP is a pure I-frame transmission.
pub fn transmit_gop(
    model: &Wvsc,
    frames: &[&[u8]],
    chan: Arc<ChannelRealization>,
    sched: &NoiseSchedule,
    opts: &GopOptions,
    seed: GopSeed,
) -> Result<GopBundle> {
    let mut g = Graph::new();
    let pass = run_gop(model, &mut g, frames, &chan, sched, opts, seed)?;
    let mut decoded = Vec::with_capacity(frames.len());
    for &c in &pass.decoded {
        decoded.push(model.codec.synthesize(g.value(c)).stage("semantic_decode")?);
    }
    let fr = |v: Var| frame_of(&g, v);
    let mut p_frames = Vec::with_capacity(frames.len().saturating_sub(1));
    for i in 0..frames.len() - 1 {
        p_frames.push(PFrame {
            predicted: fr(pass.predicted[i])?,
            residual: fr(pass.residuals[i])?,
            residual_scale: pass.residual_scales[i],
            received_residual: fr(pass.received_residuals[i])?,
            compensated: pass.compensated[i].clone(),
            motion_rx: fr(pass.motion_rx[i])?,
            trace: pass.traces[i].clone(),
        });
    }
    Ok(GopBundle {
        frames: frames.iter().map(|f| f.to_vec()).collect(),
        semantic: pass.semantic.iter().map(|&v| fr(v)).collect::<Result<_>>()?,
        scales: pass.scales.clone(),
        p_frames,
        received_ref: fr(pass.received_ref)?,
        reconstructed: pass.reconstructed.iter().map(|&v| fr(v)).collect::<Result<_>>()?,
        decoded,
        base_calls: pass.base_calls,
        channel: chan,
    })
}

/// Oracle composition check used in tests: `hs ⊙ (√λ·f_ref + √(1−λ)·r_n)`.
pub fn oracle_target(bundle: &GopBundle, p_index: usize, lambda: f64) -> Result<SemanticFrame> {
    let p = &bundle.p_frames[p_index];
    let s = p.residual_scale;
    let rn = if s > 0.0 { p.residual.scaled(1.0 / s) } else { p.residual.clone() };
    let fp = compose_p_frame(&bundle.semantic[0], &rn, lambda)?;
    bundle.channel.apply_signal_gain(&fp)
}
