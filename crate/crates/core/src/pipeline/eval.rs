//! Simulation over whole clips, SNR/seed tables and parameter sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::snr_to_sigma2;
use crate::data::VideoClip;
use crate::error::{invalid, Error, Result};
use crate::metrics::{mean_std, ms_ssim, psnr, MsSsimOptions};
use crate::models::Wvsc;

use super::config::{DiffusionConfig, ExperimentConfig, Fading};
use super::gop::{sample_channel, transmit_gop, Compensation, GopOptions, GopSeed};

/// Settings of one `simulate` run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// May be `+inf` for a noiseless channel.
    pub snr_db: f64,
    pub gop_size: usize,
    pub fading: Fading,
    pub diffusion: DiffusionConfig,
    pub compensation: Compensation,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn from_experiment(cfg: &ExperimentConfig, seed: u64) -> Self {
        Self {
            snr_db: cfg.channel.snr_db,
            gop_size: cfg.eval.gop_size,
            fading: cfg.channel.fading,
            diffusion: cfg.diffusion,
            compensation: Compensation::Learned,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() {
            return invalid("SNR must not be NaN");
        }
        if self.gop_size == 0 {
            return invalid("GoP size must be positive");
        }
        let sched = self.diffusion.schedule()?;
        self.diffusion.params().validate(&sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    I,
    P,
}

/// One CSV row: quality of one decoded frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub gop: usize,
    /// Position inside the GoP, 1 for the reference frame.
    pub frame: usize,
    pub role: Role,
    pub psnr_db: f64,
    /// NaN when the frame is too small for the metric.
    pub ms_ssim: f64,
    pub snr_db: f64,
    pub m: usize,
    pub lambda: f64,
    pub k: f64,
    pub seed: u64,
}

/// Sends every GoP of `clip` (consecutive chunks, the last may be shorter)
/// and scores each decoded frame. GoPs run in parallel; the output order
/// and values do not depend on the thread count.
pub fn simulate(model: &Wvsc, clip: &VideoClip, sim: &SimulationConfig) -> Result<Vec<FrameRecord>> {
    sim.validate()?;
    if clip.width != model.cfg.width || clip.height != model.cfg.height {
        return invalid(format!(
            "clip is {}x{}, model expects {}x{}",
            clip.width, clip.height, model.cfg.width, model.cfg.height
        ));
    }
    if clip.frame_count == 0 {
        return invalid("clip has no frames");
    }
    let sched = sim.diffusion.schedule()?;
    let opts = GopOptions {
        params: sim.diffusion.params(),
        compensation: sim.compensation,
        record_trace: false,
    };
    let sigma2 = snr_to_sigma2(sim.snr_db);
    let starts: Vec<usize> = (0..clip.frame_count).step_by(sim.gop_size).collect();
    let per_gop: Vec<Vec<FrameRecord>> = starts
        .par_iter()
        .enumerate()
        .map(|(gop, &start)| {
            let end = (start + sim.gop_size).min(clip.frame_count);
            let frames: Vec<&[u8]> = (start..end).map(|i| clip.frame(i)).collect();
            let seed = GopSeed { master: sim.seed, gop: gop as u64 };
            let chan = Arc::new(sample_channel(sim.fading, model.cfg.code_len(), sigma2, seed).map_err(|e| {
                Error::Stage { stage: "channel", source: Box::new(e) }
            })?);
            let bundle = transmit_gop(model, &frames, chan, &sched, &opts, seed)?;
            bundle
                .frames
                .iter()
                .zip(&bundle.decoded)
                .enumerate()
                .map(|(i, (x, y))| {
                    let ssim = ms_ssim(x, y, clip.width, clip.height, MsSsimOptions::default()).unwrap_or(f64::NAN);
                    Ok(FrameRecord {
                        gop,
                        frame: i + 1,
                        role: if i == 0 { Role::I } else { Role::P },
                        psnr_db: psnr(x, y, 255.0)?,
                        ms_ssim: ssim,
                        snr_db: sim.snr_db,
                        m: sim.diffusion.start_step,
                        lambda: sim.diffusion.lambda,
                        k: sim.diffusion.k,
                        seed: sim.seed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_gop.into_iter().flatten().collect())
}

/// Writes records as CSV with a header row.
pub fn write_csv<W: Write>(records: &[FrameRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["gop", "frame", "role", "psnr_db", "ms_ssim", "snr_db", "m", "lambda", "k", "seed"])
        .map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<FrameRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Aggregate quality of a set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub mean_psnr_db: f64,
    pub std_psnr_db: f64,
    /// Mean over frames where the metric is defined.
    pub mean_ms_ssim: Option<f64>,
}

impl Summary {
    pub fn of(records: &[FrameRecord]) -> Self {
        let p: Vec<f64> = records.iter().map(|r| r.psnr_db).collect();
        let (mean_psnr_db, std_psnr_db) = mean_std(&p);
        let s: Vec<f64> = records.iter().map(|r| r.ms_ssim).filter(|v| !v.is_nan()).collect();
        Self {
            frames: records.len(),
            mean_psnr_db,
            std_psnr_db,
            mean_ms_ssim: (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64),
        }
    }
}

/// One row of an [`evaluate`] table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub snr_db: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Mean quality over all frames of all clips, per (SNR, seed).
pub fn evaluate(
    model: &Wvsc,
    clips: &[VideoClip],
    snr_db: &[f64],
    seeds: &[u64],
    base: &SimulationConfig,
) -> Result<Vec<EvalRow>> {
    if clips.is_empty() || snr_db.is_empty() || seeds.is_empty() {
        return invalid("evaluate needs clips, SNR values and seeds");
    }
    let mut rows = Vec::with_capacity(snr_db.len() * seeds.len());
    for &snr in snr_db {
        for &seed in seeds {
            let sim = SimulationConfig { snr_db: snr, seed, ..base.clone() };
            let mut all = Vec::new();
            for (c, clip) in clips.iter().enumerate() {
                // Each clip gets its own seed stream.
                let sim = SimulationConfig { seed: seed.wrapping_add((c as u64) << 32), ..sim.clone() };
                all.extend(simulate(model, clip, &sim)?);
            }
            rows.push(EvalRow { snr_db: snr, seed, summary: Summary::of(&all) });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Snr,
    M,
    Lambda,
    Gop,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr" => Ok(Self::Snr),
            "m" => Ok(Self::M),
            "lambda" => Ok(Self::Lambda),
            "gop" => Ok(Self::Gop),
            _ => invalid(format!("unknown sweep parameter `{s}` (snr, m, lambda, gop)")),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Snr => "snr",
            Self::M => "m",
            Self::Lambda => "lambda",
            Self::Gop => "gop",
        })
    }
}

impl SweepParam {
    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &SimulationConfig, value: f64) -> Result<SimulationConfig> {
        let mut sim = base.clone();
        let count = |v: f64| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                invalid(format!("{self} must be a non-negative integer, got {v}"))
            }
        };
        match self {
            Self::Snr => sim.snr_db = value,
            Self::M => sim.diffusion.start_step = count(value)?,
            Self::Lambda => sim.diffusion.lambda = value,
            Self::Gop => sim.gop_size = count(value)?,
        }
        sim.validate()?;
        Ok(sim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub param: SweepParam,
    pub points: Vec<SweepPoint>,
    #[serde(skip)]
    pub records: Vec<FrameRecord>,
}

impl SweepResult {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// One simulation per value on a pool of `jobs` threads. Every point uses
/// the base seed, so points differ only in the swept parameter. Results are
/// ordered by value.
pub fn sweep(
    model: &Wvsc,
    clip: &VideoClip,
    base: &SimulationConfig,
    param: SweepParam,
    values: &[f64],
    jobs: usize,
) -> Result<SweepResult> {
    if values.is_empty() {
        return invalid("sweep needs at least one value");
    }
    if values.iter().any(|v| v.is_nan()) {
        return invalid("sweep values must not be NaN");
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sims: Vec<SimulationConfig> = sorted.iter().map(|&v| param.apply(base, v)).collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<Vec<FrameRecord>> =
        pool.install(|| sims.par_iter().map(|s| simulate(model, clip, s)).collect::<Result<_>>())?;
    let points = sorted
        .iter()
        .zip(&runs)
        .map(|(&value, r)| SweepPoint { value, summary: Summary::of(r) })
        .collect();
    Ok(SweepResult { param, points, records: runs.into_iter().flatten().collect() })
}
