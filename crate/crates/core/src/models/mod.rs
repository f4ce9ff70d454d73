//! Concrete networks and the model bundle that ties them to one parameter
//! store.

mod codec;
mod mfa;
mod motion;
mod unet;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use codec::{zigzag, Codec, CodecConfig, Encoded};
pub use mfa::{Mfa, MfaConfig, MfaVars};
pub use motion::{residual, MotionCoder};
pub use unet::{timestep_embedding, UNet};

use crate::diffusion::NoisePredictor;
use crate::error::{invalid, Error, Result};
use crate::frame::SemanticFrame;
use crate::nnkit::{Graph, ParamStore, Tensor, Var};
use crate::rng::labeled_stream;

/// Parameter-name prefixes of the sub-networks.
pub mod prefix {
    pub const CODEC_ENC: &str = "codec.enc.";
    pub const CODEC_DEC: &str = "codec.dec.";
    pub const MOTION_ENC: &str = "motion.enc.";
    pub const MOTION_DEC: &str = "motion.dec.";
    pub const BASE: &str = "base.";
    pub const RESIDUAL: &str = "residual.";
}

const META_KEY: &str = "model_config";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub coeffs_per_channel: usize,
    pub code_per_block: usize,
    pub motion_width: usize,
    /// First U-Net width; the inner level uses twice this.
    pub unet_width: usize,
    pub time_dim: usize,
    pub mfa_dim: usize,
    pub mfa_window: usize,
    /// Attend queries to the other side's keys instead of their own.
    pub mfa_crossed: bool,
    pub mfa_gamma: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            coeffs_per_channel: 64,
            code_per_block: 96,
            motion_width: 16,
            unet_width: 32,
            time_dim: 32,
            mfa_dim: 8,
            mfa_window: 3,
            mfa_crossed: false,
            mfa_gamma: 0.1,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn codec(&self) -> CodecConfig {
        CodecConfig {
            width: self.width,
            height: self.height,
            coeffs_per_channel: self.coeffs_per_channel,
            code_per_block: self.code_per_block,
        }
    }

    pub fn mfa(&self) -> MfaConfig {
        MfaConfig {
            dim: self.mfa_dim,
            window: self.mfa_window,
            crossed: self.mfa_crossed,
            gamma_init: self.mfa_gamma,
        }
    }

    pub fn code_len(&self) -> usize {
        self.codec().code_len()
    }

    pub fn validate(&self) -> Result<()> {
        self.codec().validate()?;
        let l = self.code_len();
        if self.mfa_dim == 0 || l % self.mfa_dim != 0 || l % 4 != 0 {
            return invalid(format!(
                "code length {l} must be a multiple of 4 and of the token width {}",
                self.mfa_dim
            ));
        }
        Ok(())
    }
}

/// All networks of the transceiver over one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Wvsc {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub codec: Codec,
    pub motion_enc: MotionCoder,
    pub motion_dec: MotionCoder,
    pub base: UNet,
    pub residual_mfa: Mfa,
    pub residual_unet: UNet,
}

impl Wvsc {
    /// Fresh model with seeded initialisation.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = labeled_stream(cfg.init_seed, 0x1417);
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, "codec", cfg.codec())?;
        let motion_enc = MotionCoder::new(&mut store, "motion.enc", cfg.motion_width, &mut rng)?;
        let motion_dec = MotionCoder::new(&mut store, "motion.dec", cfg.motion_width, &mut rng)?;
        let base = UNet::new(&mut store, "base", cfg.unet_width, cfg.time_dim, &mut rng)?;
        let residual_mfa = Mfa::new(&mut store, "residual.mfa", cfg.mfa(), &mut rng)?;
        let residual_unet = UNet::new(&mut store, "residual.unet", cfg.unet_width, cfg.time_dim, &mut rng)?;
        store
            .meta
            .insert(META_KEY.to_string(), serde_json::to_value(cfg)?);
        Ok(Self {
            cfg,
            store,
            codec,
            motion_enc,
            motion_dec,
            base,
            residual_mfa,
            residual_unet,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    /// Loads weights written by [`Wvsc::save`]; the architecture comes from
    /// the stored config.
    pub fn load(path: &Path) -> Result<Self> {
        let stored = ParamStore::load(path)?;
        let cfg: ModelConfig = match stored.meta.get(META_KEY) {
            Some(v) => serde_json::from_value(v.clone())?,
            None => {
                return Err(Error::Format(format!(
                    "weights {} carry no model config",
                    path.display()
                )))
            }
        };
        let mut model = Self::new(cfg)?;
        let copied = model.store.copy_matching(&stored)?;
        if copied.len() != model.store.len() || stored.len() != model.store.len() {
            return Err(Error::Format(format!(
                "weights {} hold {} tensors, model expects {}",
                path.display(),
                stored.len(),
                model.store.len()
            )));
        }
        model.store.meta = stored.meta;
        Ok(model)
    }

    pub fn base_forward(&self, g: &mut Graph, x: Var, t: usize) -> Result<Var> {
        self.base.forward(g, &self.store, x, t)
    }

    /// MFA fusion followed by the residual U-Net.
    pub fn residual_forward(&self, g: &mut Graph, x: Var, previous: &[Var], t: usize) -> Result<Var> {
        let fused = self.residual_mfa.forward(g, &self.store, x, previous)?.out;
        self.residual_unet.forward(g, &self.store, fused, t)
    }

    pub fn encode_frame(&self, frame: &[u8]) -> Result<Encoded> {
        self.codec.encode(&self.store, frame)
    }

    pub fn decode_frame(&self, code: &SemanticFrame, scale: f64) -> Result<Vec<u8>> {
        self.codec.decode(&self.store, code, scale)
    }

    /// `f̄ = V_c1(f, f_ref)` at the transmitter.
    pub fn motion_predict(&self, f: &SemanticFrame, f_ref: &SemanticFrame) -> Result<SemanticFrame> {
        self.motion_enc.predict(&self.store, f, f_ref)
    }

    /// `f̌ = V_c2(f̃, f̂_ref)` at the receiver.
    pub fn motion_reconstruct(&self, f_tilde: &SemanticFrame, f_ref_rx: &SemanticFrame) -> Result<SemanticFrame> {
        self.motion_dec.predict(&self.store, f_tilde, f_ref_rx)
    }

    pub fn base_predictor(&self) -> BasePredictor<'_> {
        BasePredictor(self)
    }

    pub fn residual_predictor(&self) -> ResidualPredictor<'_> {
        ResidualPredictor(self)
    }
}

fn row(f: &SemanticFrame) -> Tensor {
    Tensor::row(f.as_slice().to_vec())
}

/// Base noise estimate `ε_ref(z_t, t)`; ignores context.
#[derive(Debug, Clone, Copy)]
pub struct BasePredictor<'a>(pub &'a Wvsc);

impl NoisePredictor for BasePredictor<'_> {
    fn predict(&self, z: &SemanticFrame, t: usize, _context: &[SemanticFrame]) -> Result<SemanticFrame> {
        let mut g = Graph::new();
        let x = g.constant(row(z));
        let y = self.0.base_forward(&mut g, x, t)?;
        SemanticFrame::new(g.value(y).data().to_vec())
    }
}

/// Residual noise estimate `φ(z'_t, t, previous)`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualPredictor<'a>(pub &'a Wvsc);

impl NoisePredictor for ResidualPredictor<'_> {
    fn predict(&self, z: &SemanticFrame, t: usize, context: &[SemanticFrame]) -> Result<SemanticFrame> {
        let mut g = Graph::new();
        let x = g.constant(row(z));
        let prev: Vec<Var> = context.iter().map(|f| g.constant(row(f))).collect();
        let y = self.0.residual_forward(&mut g, x, &prev, t)?;
        SemanticFrame::new(g.value(y).data().to_vec())
    }
}
