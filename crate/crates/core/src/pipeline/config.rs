//! Experiment configuration file: TOML with `[channel]`, `[diffusion]`,
//! `[model]`, `[train]` and `[eval]` sections. Every key is optional and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::snr_to_sigma2;
use crate::ddmfc::CompensationParams;
use crate::diffusion::{NoiseSchedule, SteeringConfig};
use crate::error::{Error, Result};
use crate::models::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fading {
    #[default]
    Rayleigh,
    /// Unit taps, noise only.
    Awgn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub fading: Fading,
    pub snr_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            fading: Fading::Rayleigh,
            snr_db: 10.0,
        }
    }
}

impl ChannelConfig {
    pub fn sigma2(&self) -> f64 {
        snr_to_sigma2(self.snr_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub total_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Reverse steps `m` per chain.
    pub start_step: usize,
    pub lambda: f64,
    /// Constant steering scale `k(t)`.
    pub k: f64,
    pub sigma_t: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            total_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            start_step: 10,
            lambda: 0.7,
            k: 0.3,
            sigma_t: 0.0,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.total_steps, self.beta_start, self.beta_end)
    }

    pub fn params(&self) -> CompensationParams {
        CompensationParams {
            lambda: self.lambda,
            steering: SteeringConfig::mse(self.k),
            sigma_t: self.sigma_t,
            start_step: self.start_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer steps per stage.
    pub steps: usize,
    pub gop_size: usize,
    /// GoPs per optimizer step.
    pub batch: usize,
    /// Weight of the diffusion loss in the joint objective.
    pub mu: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Number of constant-rate segments between `lr_start` and `lr_end`.
    pub lr_levels: usize,
    pub weight_decay: f64,
    /// Per-GoP SNR is drawn uniformly from this range (dB).
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            gop_size: 10,
            batch: 1,
            mu: 1e-4,
            lr_start: 1e-4,
            lr_end: 2e-5,
            lr_levels: 4,
            weight_decay: 0.01,
            snr_db_min: 0.0,
            snr_db_max: 20.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Stepped learning rate: `lr_levels` equal segments, geometrically
    /// spaced from `lr_start` to `lr_end`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.lr_levels <= 1 || self.steps == 0 {
            return self.lr_start;
        }
        let level = (step * self.lr_levels / self.steps).min(self.lr_levels - 1);
        let frac = level as f64 / (self.lr_levels - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub snr_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub gop_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 6.0, 12.0, 18.0],
            seeds: vec![0],
            gop_size: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub diffusion: DiffusionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let sched = self.diffusion.schedule().map_err(|e| Error::Config(e.to_string()))?;
        self.diffusion
            .params()
            .validate(&sched)
            .map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.train;
        if !(t.mu >= 0.0) {
            return cfg_err(format!("train.mu must be >= 0, got {}", t.mu));
        }
        if t.gop_size == 0 || t.batch == 0 {
            return cfg_err("train.gop_size and train.batch must be positive".into());
        }
        if !(t.lr_start > 0.0 && t.lr_end > 0.0) {
            return cfg_err("learning rates must be positive".into());
        }
        if !(t.snr_db_min <= t.snr_db_max) || !t.snr_db_min.is_finite() || !t.snr_db_max.is_finite() {
            return cfg_err("train SNR range must be finite with min <= max".into());
        }
        if self.eval.gop_size == 0 {
            return cfg_err("eval.gop_size must be positive".into());
        }
        if self.channel.snr_db.is_nan() || self.eval.snr_db.iter().any(|s| s.is_nan()) {
            return cfg_err("SNR values must not be NaN".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.diffusion.start_step, 10);
        assert_eq!(cfg.diffusion.lambda, 0.7);
        assert_eq!(cfg.diffusion.k, 0.3);
        assert_eq!(cfg.train.gop_size, 10);
        assert_eq!(cfg.train.mu, 1e-4);
    }

    #[test]
    fn sections_parse_and_round_trip() {
        let text = r#"
            [channel]
            fading = "awgn"
            snr_db = inf
            [diffusion]
            start_step = 5
            [model]
            width = 32
            height = 32
            code_per_block = 16
            [train]
            steps = 20
            [eval]
            snr_db = [0.0, 10.0]
        "#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.channel.fading, Fading::Awgn);
        assert_eq!(cfg.channel.sigma2(), 0.0);
        assert_eq!(cfg.model.width, 32);
        assert_eq!(cfg.eval.snr_db, vec![0.0, 10.0]);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        for text in [
            "[channel]\nsnr = 3",
            "[bogus]\nx = 1",
            "[train]\nmu = -1.0",
            "[diffusion]\nlambda = 1.5",
            "[diffusion]\nstart_step = 1001",
            "[model]\nwidth = 30",
            "[train]\nsnr_db_min = 5.0\nsnr_db_max = 1.0",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn learning_rate_steps_down_in_four_levels() {
        let t = TrainConfig { steps: 100, ..TrainConfig::default() };
        let lrs: Vec<f64> = [0, 24, 25, 50, 75, 99].iter().map(|&s| t.learning_rate(s)).collect();
        assert_eq!(lrs[0], 1e-4);
        assert_eq!(lrs[0], lrs[1]);
        assert!(lrs[2] < lrs[1] && lrs[3] < lrs[2] && lrs[4] < lrs[3]);
        assert!((lrs[5] - 2e-5).abs() < 1e-18);
    }
}
