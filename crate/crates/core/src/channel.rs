//! Rayleigh block fading with AWGN and per-symbol MMSE equalization.
//!
//! A length-`L` real frame is carried as `L/2` complex symbols. After MMSE
//! equalization the received real vector is
//!
//! ```text
//! f̂ = hs ⊙ f + hn ⊙ n,   n ~ N(0, σ²)   (per real dimension)
//! hs[j] = g² / (g² + 2σ²),  hn[j] = g / (g² + 2σ²),  g = |h[j mod L/2]|
//! ```
//!
//! where complex noise is CN(0, 2σ²) and symbols carry unit average power, so
//! `SNR = 1 / (2σ²)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::frame::SemanticFrame;

/// Draws `half_len` i.i.d. CN(0, 1) fading taps.
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R, half_len: usize) -> Result<Vec<Complex64>> {
    if half_len == 0 {
        return invalid("half_len must be at least 1");
    }
    let std = std::f64::consts::FRAC_1_SQRT_2;
    Ok((0..half_len)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(std * re, std * im)
        })
        .collect())
}

/// Per-real-dimension noise variance for a given SNR in dB. `+∞` maps to 0.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0) / 2.0
}

/// Packs `[re..., im...]` into complex symbols.
pub fn pack_complex(re_im: &[f64]) -> Result<Vec<Complex64>> {
    if re_im.len() % 2 != 0 {
        return invalid(format!("cannot pack odd length {}", re_im.len()));
    }
    let half = re_im.len() / 2;
    Ok((0..half)
        .map(|j| Complex64::new(re_im[j], re_im[half + j]))
        .collect())
}

pub fn unpack_complex(symbols: &[Complex64]) -> Vec<f64> {
    symbols
        .iter()
        .map(|c| c.re)
        .chain(symbols.iter().map(|c| c.im))
        .collect()
}

/// One fading + noise-level draw, shared by every frame of a GoP.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    h: Vec<Complex64>,
    sigma2: f64,
    hs: Vec<f64>,
    hn: Vec<f64>,
}

impl ChannelRealization {
    pub fn new(h: Vec<Complex64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) {
            return invalid(format!("sigma2 must be non-negative, got {sigma2}"));
        }
        if h.is_empty() {
            return invalid("fading vector must be non-empty");
        }
        let gains: Vec<f64> = h.iter().map(|c| c.norm()).collect();
        let (hs_half, hn_half): (Vec<f64>, Vec<f64>) = gains
            .iter()
            .map(|&g| {
                let denom = g * g + 2.0 * sigma2;
                // A zero tap on a noiseless channel carries nothing.
                if denom == 0.0 {
                    (0.0, 0.0)
                } else {
                    (g * g / denom, g / denom)
                }
            })
            .unzip();
        let hs = hs_half.iter().chain(&hs_half).copied().collect();
        let hn = hn_half.iter().chain(&hn_half).copied().collect();
        Ok(Self { h, sigma2, hs, hn })
    }

    /// Draws fresh Rayleigh taps for frames of length `len`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, len: usize, sigma2: f64) -> Result<Self> {
        if len % 2 != 0 {
            return invalid(format!("frame length must be even, got {len}"));
        }
        let h = sample_rayleigh(rng, len / 2)?;
        Self::new(h, sigma2)
    }

    /// Unit-gain noiseless channel, handy for tests and oracle runs.
    pub fn identity(len: usize) -> Result<Self> {
        if len == 0 || len % 2 != 0 {
            return invalid(format!("frame length must be even and positive, got {len}"));
        }
        Self::new(vec![Complex64::new(1.0, 0.0); len / 2], 0.0)
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn hs(&self) -> &[f64] {
        &self.hs
    }

    pub fn hn(&self) -> &[f64] {
        &self.hn
    }

    /// Real frame length this realization serves.
    pub fn len(&self) -> usize {
        self.hs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hs.is_empty()
    }

    /// `|h_d[j]|`, the stacked tap magnitude for real coordinate `j`.
    pub fn gain(&self, j: usize) -> f64 {
        self.h[j % self.h.len()].norm()
    }

    pub(crate) fn check_frame(&self, f: &SemanticFrame) -> Result<()> {
        if f.len() != self.len() {
            return invalid(format!(
                "frame length {} does not match channel length {}",
                f.len(),
                self.len()
            ));
        }
        Ok(())
    }

    /// `hs ⊙ f`, the noiseless equalized frame.
    pub fn apply_signal_gain(&self, f: &SemanticFrame) -> Result<SemanticFrame> {
        self.check_frame(f)?;
        Ok(SemanticFrame::from_raw(
            f.as_slice().iter().zip(&self.hs).map(|(x, g)| x * g).collect(),
        ))
    }

    /// Transmits `f` and equalizes it, with the noise draw exposed so oracle
    /// components can see what the channel injected.
    pub fn transmit_with_noise<R: Rng + ?Sized>(
        &self,
        f: &SemanticFrame,
        rng: &mut R,
    ) -> Result<(SemanticFrame, Vec<f64>)> {
        self.check_frame(f)?;
        let std = self.sigma2.sqrt();
        let noise: Vec<f64> = (0..f.len())
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let out = f
            .as_slice()
            .iter()
            .zip(&self.hs)
            .zip(&self.hn)
            .zip(&noise)
            .map(|(((x, s), g), n)| s * x + g * n)
            .collect();
        Ok((SemanticFrame::from_raw(out), noise))
    }

    pub fn transmit<R: Rng + ?Sized>(&self, f: &SemanticFrame, rng: &mut R) -> Result<SemanticFrame> {
        self.transmit_with_noise(f, rng).map(|(out, _)| out)
    }
}

/// `transmit_equalized` as a free function.
pub fn transmit_equalized<R: Rng + ?Sized>(
    f: &SemanticFrame,
    chan: &ChannelRealization,
    rng: &mut R,
) -> Result<SemanticFrame> {
    chan.transmit(f, rng)
}
