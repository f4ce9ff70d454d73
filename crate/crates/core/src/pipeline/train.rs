//! Three-stage training.
//!
//! Stage 1 trains everything on `L_R + μ·L_D`. Stage 2 trains only the two
//! noise predictors on `L_D`. Stage 3 trains only the codec and motion
//! decoders on `L_R`. Freezing is a trainable mask on the parameter store.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::snr_to_sigma2;
use crate::data::VideoClip;
use crate::diffusion::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::frame::{power_normalize, SemanticFrame};
use crate::models::{prefix, residual, Wvsc};
use crate::nnkit::{AdamW, Graph, Var};
use crate::rng::{labeled_stream, SimRng};

use super::config::ExperimentConfig;
use super::gop::{run_gop, sample_channel, Compensation, GopOptions, GopSeed};
use super::loss::{loss_diffusion, reconstruction_graph, DiffusionDraw};

const STEP_LABEL: u64 = 0x7EA1;
const PROBE_LABEL: u64 = 0x0B5E;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    /// Codec, motion coders and predictors together.
    Joint = 1,
    /// Noise predictors only.
    Compensation = 2,
    /// Codec and motion decoders only.
    Decoder = 3,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }

    fn uses_reconstruction(self) -> bool {
        self != Stage::Compensation
    }

    fn uses_diffusion(self) -> bool {
        self != Stage::Decoder
    }

    fn trainable_prefixes(self) -> &'static [&'static str] {
        match self {
            Stage::Joint => &[""],
            Stage::Compensation => &[prefix::BASE, prefix::RESIDUAL],
            Stage::Decoder => &[prefix::CODEC_DEC, prefix::MOTION_DEC],
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::Joint),
            2 => Ok(Stage::Compensation),
            3 => Ok(Stage::Decoder),
            _ => invalid(format!("stage must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v: u8 = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("stage must be 1, 2 or 3, got {s:?}")))?;
        Stage::try_from(v)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Last completed stage recorded in the weights, 0 for fresh weights.
pub fn completed_stage(model: &Wvsc) -> u8 {
    model
        .store
        .meta
        .get("stage")
        .and_then(|v| v.as_u64())
        .map_or(0, |v| v.min(3) as u8)
}

fn check_prerequisite(model: &Wvsc, stage: Stage) -> Result<()> {
    let need = stage.number() - 1;
    let have = completed_stage(model);
    if have < need {
        return Err(Error::MissingPrerequisite(format!(
            "stage {stage} needs weights from stage {need}, the given weights have completed stage {have}"
        )));
    }
    Ok(())
}

/// Loss curve of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    /// Batch loss at each optimizer step.
    pub losses: Vec<f64>,
    /// Learning rate used at each step.
    pub lr: Vec<f64>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One training GoP: clip window, channel and randomness.
struct Sample {
    clip: usize,
    start: usize,
    len: usize,
    sigma2: f64,
    seed: GopSeed,
}

fn draw_sample(rng: &mut SimRng, clips: &[VideoClip], cfg: &ExperimentConfig, gop: u64) -> Sample {
    let t = &cfg.train;
    let clip = rng.random_range(0..clips.len());
    let frames = clips[clip].frame_count;
    let len = t.gop_size.min(frames);
    let start = rng.random_range(0..=frames - len);
    let snr = if t.snr_db_min == t.snr_db_max {
        t.snr_db_min
    } else {
        rng.random_range(t.snr_db_min..=t.snr_db_max)
    };
    Sample {
        clip,
        start,
        len,
        sigma2: snr_to_sigma2(snr),
        seed: GopSeed { master: t.seed ^ rng.random::<u64>(), gop },
    }
}

/// Transmitter-side semantic frames and normalized residuals, as values.
fn transmitter_frames(model: &Wvsc, frames: &[&[u8]]) -> Result<(Vec<SemanticFrame>, Vec<SemanticFrame>)> {
    let semantic: Vec<SemanticFrame> = frames
        .iter()
        .map(|x| model.encode_frame(x).map(|e| e.frame))
        .collect::<Result<_>>()?;
    let mut residuals = Vec::with_capacity(frames.len().saturating_sub(1));
    for f in &semantic[1..] {
        let pred = model.motion_predict(f, &semantic[0])?;
        let (rn, _) = power_normalize(residual(f, &pred)?.as_slice())?;
        residuals.push(rn);
    }
    Ok((semantic, residuals))
}

/// Builds the stage objective for one GoP on `g`.
fn gop_objective(
    model: &Wvsc,
    g: &mut Graph,
    stage: Stage,
    clips: &[VideoClip],
    cfg: &ExperimentConfig,
    sched: &NoiseSchedule,
    s: &Sample,
) -> Result<Var> {
    let clip = &clips[s.clip];
    let frames: Vec<&[u8]> = (s.start..s.start + s.len).map(|i| clip.frame(i)).collect();
    let l = model.cfg.code_len();
    let chan = sample_channel(cfg.channel.fading, l, s.sigma2, s.seed)?;
    let mut loss: Option<Var> = None;
    if stage.uses_reconstruction() {
        let opts = GopOptions {
            params: cfg.diffusion.params(),
            compensation: Compensation::Learned,
            record_trace: false,
        };
        let pass = run_gop(model, g, &frames, &chan, sched, &opts, s.seed)?;
        let pixels = model.cfg.width * model.cfg.height * 3;
        loss = Some(reconstruction_graph(g, &pass, pixels)?);
    }
    if stage.uses_diffusion() {
        let (semantic, residuals) = transmitter_frames(model, &frames)?;
        let mut rng = s.seed.diffusion();
        let draw = DiffusionDraw::sample(&mut rng, frames.len(), l, sched.total_steps())?;
        let ld = loss_diffusion(g, model, &semantic, &residuals, &draw, cfg.diffusion.lambda, sched, &chan)?;
        loss = Some(match loss {
            Some(lr) => {
                let w = g.scale(ld, cfg.train.mu);
                g.add(lr, w)?
            }
            None => ld,
        });
    }
    Ok(loss.expect("every stage has an objective"))
}

fn check_clips(model: &Wvsc, clips: &[VideoClip]) -> Result<()> {
    if clips.is_empty() {
        return invalid("training needs at least one clip");
    }
    for c in clips {
        if c.width != model.cfg.width || c.height != model.cfg.height || c.frame_count == 0 {
            return invalid(format!(
                "clip is {}x{} with {} frames, model expects {}x{}",
                c.width,
                c.height,
                c.frame_count,
                model.cfg.width,
                model.cfg.height
            ));
        }
    }
    Ok(())
}

/// Trains one stage in place and records the stage in the weights' metadata.
pub fn train_stage(model: &mut Wvsc, stage: Stage, clips: &[VideoClip], cfg: &ExperimentConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.model != model.cfg {
        return Err(Error::Config("the [model] section does not match the weights".into()));
    }
    check_prerequisite(model, stage)?;
    check_clips(model, clips)?;
    let sched = cfg.diffusion.schedule()?;
    let t = &cfg.train;

    model.store.set_all_trainable(false);
    for p in stage.trainable_prefixes() {
        model.store.set_trainable_prefix(p, true);
    }

    let mut rng = labeled_stream(t.seed, STEP_LABEL + stage.number() as u64);
    let mut losses = Vec::with_capacity(t.steps);
    let mut lrs = Vec::with_capacity(t.steps);
    let weight = 1.0 / t.batch as f64;
    for step in 0..t.steps {
        model.store.zero_grad();
        let mut total = 0.0;
        for b in 0..t.batch {
            let s = draw_sample(&mut rng, clips, cfg, (step * t.batch + b) as u64);
            let mut g = Graph::new();
            let loss = gop_objective(model, &mut g, stage, clips, cfg, &sched, &s)?;
            let grads = g.backward(loss)?;
            total += g.value(loss).data()[0] * weight;
            model.store.accumulate(&g, &grads, weight);
        }
        let lr = t.learning_rate(step);
        model.store.adamw_step(&AdamW { lr, weight_decay: t.weight_decay, ..AdamW::default() })?;
        losses.push(total);
        lrs.push(lr);
    }
    model.store.set_all_trainable(true);
    let done = completed_stage(model).max(stage.number());
    model.store.meta.insert("stage".into(), done.into());
    Ok(TrainReport { stage, losses, lr: lrs })
}

/// Stage objective averaged over `gops` fixed GoPs, for before/after
/// comparisons. Does not touch the weights.
pub fn stage_objective(model: &Wvsc, stage: Stage, clips: &[VideoClip], cfg: &ExperimentConfig, gops: usize) -> Result<f64> {
    check_clips(model, clips)?;
    if gops == 0 {
        return invalid("need at least one GoP");
    }
    let sched = cfg.diffusion.schedule()?;
    let mut rng = labeled_stream(cfg.train.seed, PROBE_LABEL);
    let mut total = 0.0;
    for i in 0..gops {
        let s = draw_sample(&mut rng, clips, cfg, i as u64);
        let mut g = Graph::new();
        let loss = gop_objective(model, &mut g, stage, clips, cfg, &sched, &s)?;
        total += g.value(loss).data()[0];
    }
    Ok(total / gops as f64)
}
