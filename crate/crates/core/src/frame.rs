//! The semantic frame: a real vector of even length `L` that the channel carries
//! as `L/2` complex symbols (first half real parts, second half imaginary parts).

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFrame(Vec<f64>);

impl SemanticFrame {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() || data.len() % 2 != 0 {
            return invalid(format!(
                "semantic frame length must be even and positive, got {}",
                data.len()
            ));
        }
        if let Some(j) = data.iter().position(|v| !v.is_finite()) {
            return invalid(format!("semantic frame entry {j} is not finite"));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Result<Self> {
        Self::new(vec![0.0; len])
    }

    /// Builds a frame from values produced by internal arithmetic on
    /// already-validated frames.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        debug_assert!(data.len() % 2 == 0 && !data.is_empty());
        Self(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Average power per complex symbol, `‖f‖² / (L/2)`.
    pub fn symbol_power(&self) -> f64 {
        self.norm_sq() / (self.len() / 2) as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub(crate) fn check_len(&self, other: &Self, what: &str) -> Result<()> {
        if self.len() != other.len() {
            return invalid(format!(
                "{what}: length mismatch ({} vs {})",
                self.len(),
                other.len()
            ));
        }
        Ok(())
    }

    /// `a·self + b·other`, lengths must already agree.
    pub(crate) fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    pub(crate) fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|x| a * x).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other, "frame subtraction")?;
        Ok(self.lin_comb(1.0, other, -1.0))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other, "frame addition")?;
        Ok(self.lin_comb(1.0, other, 1.0))
    }
}

impl AsRef<[f64]> for SemanticFrame {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Normalizes `data` to unit average power per complex symbol, returning the
/// normalized frame and the scale `s` with `data = s · normalized`.
pub fn power_normalize(data: &[f64]) -> Result<(SemanticFrame, f64)> {
    let n = data.len();
    if n == 0 || n % 2 != 0 {
        return invalid(format!("cannot normalize vector of length {n}"));
    }
    let scale = (data.iter().map(|v| v * v).sum::<f64>() / (n / 2) as f64).sqrt();
    if scale == 0.0 {
        return Ok((SemanticFrame::new(data.to_vec())?, 0.0));
    }
    let out = SemanticFrame::new(data.iter().map(|v| v / scale).collect())?;
    Ok((out, scale))
}
