//! `wvsc`: synthetic clips, three-stage training, simulation and sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 missing
//! prerequisite weights, 4 runtime failure (the message names the stage).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wvsc_core::data::{generate_clip, read_clip, sidecar_path, write_clip, MotionSpec, VideoClip};
use wvsc_core::error::Error;
use wvsc_core::models::Wvsc;
use wvsc_core::pipeline::{
    evaluate, simulate, sweep, train_stage, write_csv, Compensation, ExperimentConfig, SimulationConfig, Stage,
    SweepParam,
};

const CSV_HELP: &str = "CSV columns: gop (0-based), frame (1-based within the GoP), role (I|P), psnr_db, \
ms_ssim (NaN when the frame is too small), snr_db, m, lambda, k, seed";

#[derive(Parser, Debug)]
#[command(name = "wvsc", version, about = "Semantic video transmission over fading channels")]
struct Cli {
    /// Worker threads; WVSC_THREADS overrides this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic clip (raw planar RGB plus a JSON sidecar).
    Gen(GenArgs),
    /// Run one training stage.
    Train(TrainArgs),
    /// Transmit a clip GoP by GoP and write per-frame quality.
    #[command(after_help = CSV_HELP)]
    Simulate(SimulateArgs),
    /// One simulation per parameter value, merged CSV and JSON summary.
    #[command(after_help = CSV_HELP)]
    Sweep(SweepArgs),
    /// Mean quality per (SNR, seed) from the [eval] section, as JSON.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// WxH, e.g. 128x128.
    #[arg(long, default_value = "128x128", value_parser = parse_size)]
    size: (usize, usize),
    /// KIND:VX,VY[:BACKGROUND] with KIND in rect|sinusoid|checker and
    /// BACKGROUND in flat|gradient|noise.
    #[arg(long, default_value = "rect:2,0", allow_hyphen_values = true)]
    motion: MotionSpec,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    stage: u8,
    /// Experiment TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A clip file or a directory of clips.
    #[arg(long)]
    data: PathBuf,
    /// Weights from the previous stage (required for stages 2 and 3).
    #[arg(long)]
    in_weights: Option<PathBuf>,
    #[arg(long)]
    out_weights: PathBuf,
    /// Loss-curve JSON; defaults to OUT_WEIGHTS.log.json.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SimArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Trained weights; a freshly initialized model is used when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Channel SNR in dB; `inf` for a noiseless channel.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    gop_size: Option<usize>,
    /// Reverse diffusion steps.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Steering scale.
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    sigma_t: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use oracle noise predictors built from transmitter-side knowledge.
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values, e.g. 1,5,10,15.
    #[arg(long, allow_hyphen_values = true)]
    values: String,
    /// JSON summary; defaults to OUT.json.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("expected WxH, got `{s}`"));
    let (w, h) = (p(w)?, p(h)?);
    if w == 0 || h == 0 {
        return Err("width and height must be positive".into());
    }
    Ok((w, h))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        Error::MissingPrerequisite(_) => 3,
        _ => 4,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_model(weights: Option<&Path>, cfg: &ExperimentConfig) -> Result<Wvsc, Error> {
    match weights {
        Some(p) => Wvsc::load(p),
        None => Wvsc::new(cfg.model),
    }
}

/// A clip file, or every clip (file with a sidecar) in a directory, sorted
/// by name.
fn load_clips(path: &Path) -> Result<Vec<VideoClip>, Error> {
    if !path.is_dir() {
        return Ok(vec![read_clip(path)?]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && sidecar_path(p).is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no clips in {}", path.display())));
    }
    files.iter().map(|p| read_clip(p)).collect()
}

fn one_clip(path: &Path) -> Result<VideoClip, Error> {
    let mut clips = load_clips(path)?;
    if clips.len() != 1 {
        return Err(Error::InvalidArgument(format!("{} holds {} clips, expected one", path.display(), clips.len())));
    }
    Ok(clips.remove(0))
}

fn sim_config(a: &SimArgs, cfg: &ExperimentConfig) -> SimulationConfig {
    let mut s = SimulationConfig::from_experiment(cfg, a.seed);
    if let Some(v) = a.snr_db {
        s.snr_db = v;
    }
    if let Some(v) = a.gop_size {
        s.gop_size = v;
    }
    if let Some(v) = a.m {
        s.diffusion.start_step = v;
    }
    if let Some(v) = a.lambda {
        s.diffusion.lambda = v;
    }
    if let Some(v) = a.k {
        s.diffusion.k = v;
    }
    if let Some(v) = a.sigma_t {
        s.diffusion.sigma_t = v;
    }
    if a.oracle {
        s.compensation = Compensation::Oracle;
    }
    s
}

fn gen(a: GenArgs) -> Result<(), Error> {
    let spec = MotionSpec { seed: a.seed, ..a.motion };
    let clip = generate_clip(&spec, a.size.0, a.size.1, a.frames)?;
    write_clip(&clip, &a.out)?;
    println!("{}", clip.as_bytes().len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let stage = Stage::try_from(a.stage)?;
    let cfg = load_config(a.config.as_deref())?;
    let mut model = match (&a.in_weights, stage) {
        (Some(p), _) => Wvsc::load(p)?,
        (None, Stage::Joint) => Wvsc::new(cfg.model)?,
        (None, _) => {
            return Err(Error::MissingPrerequisite(format!(
                "stage {stage} starts from the weights of stage {}; pass them with --in-weights",
                stage.number() - 1
            )))
        }
    };
    let clips = load_clips(&a.data)?;
    let report = train_stage(&mut model, stage, &clips, &cfg)?;
    model.save(&a.out_weights)?;
    let log = a.log.unwrap_or_else(|| with_suffix(&a.out_weights, ".log.json"));
    fs::write(&log, report.to_json())?;
    if let (Some(first), Some(last)) = (report.losses.first(), report.losses.last()) {
        println!("stage {stage}: {} steps, loss {first:.6} -> {last:.6}", report.losses.len());
    }
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run_simulate(a: SimulateArgs) -> Result<(), Error> {
    let a = a.sim;
    let cfg = load_config(a.config.as_deref())?;
    let model = load_model(a.weights.as_deref(), &cfg)?;
    let clip = one_clip(&a.data)?;
    let records = simulate(&model, &clip, &sim_config(&a, &cfg))?;
    write_csv(&records, BufWriter::new(File::create(&a.out)?))?;
    Ok(())
}

fn run_sweep(a: SweepArgs, jobs: usize) -> Result<(), Error> {
    let values: Vec<f64> = a
        .values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::InvalidArgument(format!("bad sweep value `{v}`"))))
        .collect::<Result<_, _>>()?;
    let s = &a.sim;
    let cfg = load_config(s.config.as_deref())?;
    let model = load_model(s.weights.as_deref(), &cfg)?;
    let clip = one_clip(&s.data)?;
    let result = sweep(&model, &clip, &sim_config(s, &cfg), a.param, &values, jobs)?;
    write_csv(&result.records, BufWriter::new(File::create(&s.out)?))?;
    let summary = a.summary.unwrap_or_else(|| with_suffix(&s.out, ".json"));
    fs::write(&summary, result.summary_json())?;
    for p in &result.points {
        println!("{}={}: mean PSNR {:.3} dB over {} frames", a.param, p.value, p.summary.mean_psnr_db, p.summary.frames);
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let cfg = load_config(a.config.as_deref())?;
    let model = load_model(a.weights.as_deref(), &cfg)?;
    let clips = load_clips(&a.data)?;
    let mut base = SimulationConfig::from_experiment(&cfg, 0);
    if a.oracle {
        base.compensation = Compensation::Oracle;
    }
    let rows = evaluate(&model, &clips, &cfg.eval.snr_db, &cfg.eval.seeds, &base)?;
    fs::write(&a.out, serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

fn jobs(flag: Option<usize>) -> usize {
    std::env::var("WVSC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .or(flag)
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = jobs(cli.jobs);
    // Only fails if a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let result = match cli.cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Sweep(a) => run_sweep(a, jobs),
        Command::Evaluate(a) => run_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
