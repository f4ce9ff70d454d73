//! Toy semantic codec: 8×8 block DCT per colour plane, zig-zag truncation, and a
//! learned projection shared by all blocks. The code of length
//! `L = blocks · code_per_block` is laid out code-channel major, so entry
//! `k·blocks + b` is output `k` of block `b`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::frame::{power_normalize, SemanticFrame};
use crate::nnkit::{Graph, ParamId, ParamStore, Tensor, Var};

const B: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub width: usize,
    pub height: usize,
    /// Zig-zag coefficients kept per colour plane and block.
    pub coeffs_per_channel: usize,
    /// Code entries per block.
    pub code_per_block: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            coeffs_per_channel: 64,
            code_per_block: 192,
        }
    }
}

impl CodecConfig {
    pub fn blocks(&self) -> usize {
        (self.width / B) * (self.height / B)
    }

    /// Inputs to the per-block projection.
    pub fn block_inputs(&self) -> usize {
        3 * self.coeffs_per_channel
    }

    pub fn code_len(&self) -> usize {
        self.blocks() * self.code_per_block
    }

    /// Complex channel uses per source dimension.
    pub fn cbr(&self) -> f64 {
        (self.code_len() / 2) as f64 / (self.width * self.height * 3) as f64
    }

    pub fn frame_bytes(&self) -> usize {
        3 * self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width % B != 0 || self.height % B != 0 {
            return invalid(format!(
                "codec frame size {}x{} must be positive multiples of {B}",
                self.width, self.height
            ));
        }
        if !(1..=B * B).contains(&self.coeffs_per_channel) {
            return invalid(format!(
                "coeffs_per_channel must be in 1..=64, got {}",
                self.coeffs_per_channel
            ));
        }
        let l = self.code_len();
        if self.code_per_block == 0 || l % 2 != 0 || l > 2 * self.frame_bytes() {
            return invalid(format!(
                "code length L = {l} must be even, positive and at most 2·H·W·3"
            ));
        }
        Ok(())
    }
}

/// Zig-zag scan order of an 8×8 block as row-major indices.
pub fn zigzag() -> [usize; 64] {
    let mut out = [0; 64];
    let mut i = 0;
    for s in 0..(2 * B - 1) {
        let range: Vec<usize> = (0..=s).filter(|&r| r < B && s - r < B).collect();
        let rows: Box<dyn Iterator<Item = usize>> = if s % 2 == 0 {
            Box::new(range.into_iter().rev())
        } else {
            Box::new(range.into_iter())
        };
        for r in rows {
            out[i] = r * B + (s - r);
            i += 1;
        }
    }
    out
}

/// Orthonormal DCT-II matrix, `C[k][n]`.
fn dct_matrix() -> [[f64; B]; B] {
    let mut c = [[0.0; B]; B];
    for (k, row) in c.iter_mut().enumerate() {
        let a = if k == 0 { (1.0 / B as f64).sqrt() } else { (2.0 / B as f64).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = a * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / (2 * B) as f64).cos();
        }
    }
    c
}

/// A frame after the encoder: the unit-power code and its side-information
/// scale, `code · scale` being the raw projection output.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub frame: SemanticFrame,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Codec {
    pub cfg: CodecConfig,
    pub enc: ParamId,
    pub dec: ParamId,
    zz: [usize; 64],
    dct: [[f64; B]; B],
}

impl Codec {
    /// Registers `{prefix}.enc.w` and `{prefix}.dec.w`, initialised to a
    /// partial identity and its transpose.
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let (n_in, n_out) = (cfg.block_inputs(), cfg.code_per_block);
        let mut w = Tensor::zeros(&[n_in, n_out]);
        let mut wt = Tensor::zeros(&[n_out, n_in]);
        for i in 0..n_in.min(n_out) {
            w.data_mut()[i * n_out + i] = 1.0;
            wt.data_mut()[i * n_in + i] = 1.0;
        }
        Ok(Self {
            cfg,
            enc: store.add(&format!("{prefix}.enc.w"), w)?,
            dec: store.add(&format!("{prefix}.dec.w"), wt)?,
            zz: zigzag(),
            dct: dct_matrix(),
        })
    }

    fn check_frame(&self, frame: &[u8]) -> Result<()> {
        if frame.len() != self.cfg.frame_bytes() {
            return invalid(format!(
                "codec expects {}x{} RGB frames ({} bytes), got {} bytes",
                self.cfg.width,
                self.cfg.height,
                self.cfg.frame_bytes(),
                frame.len()
            ));
        }
        Ok(())
    }

    /// Kept DCT coefficients as `[blocks, 3·coeffs]`, ordered frequency-major
    /// then colour, so a partial identity keeps the lowest frequencies of
    /// every plane.
    pub fn analyze(&self, frame: &[u8]) -> Result<Tensor> {
        self.check_frame(frame)?;
        let (w, h, kc) = (self.cfg.width, self.cfg.height, self.cfg.coeffs_per_channel);
        let bw = w / B;
        let n_in = self.cfg.block_inputs();
        let mut out = vec![0.0; self.cfg.blocks() * n_in];
        let mut blk = [0.0; B * B];
        let mut tmp = [0.0; B * B];
        for b in 0..self.cfg.blocks() {
            let (by, bx) = (b / bw, b % bw);
            for c in 0..3 {
                let plane = &frame[c * w * h..(c + 1) * w * h];
                for y in 0..B {
                    for x in 0..B {
                        blk[y * B + x] = plane[(by * B + y) * w + bx * B + x] as f64 / 255.0 - 0.5;
                    }
                }
                // Rows then columns.
                for y in 0..B {
                    for k in 0..B {
                        tmp[y * B + k] = (0..B).map(|n| self.dct[k][n] * blk[y * B + n]).sum();
                    }
                }
                for k in 0..B {
                    for x in 0..B {
                        blk[k * B + x] = (0..B).map(|n| self.dct[k][n] * tmp[n * B + x]).sum();
                    }
                }
                for (j, &pos) in self.zz[..kc].iter().enumerate() {
                    out[b * n_in + 3 * j + c] = blk[pos];
                }
            }
        }
        Tensor::matrix(self.cfg.blocks(), n_in, out)
    }

    /// Inverse of [`Codec::analyze`] with dropped coefficients set to zero.
    pub fn synthesize(&self, coeffs: &Tensor) -> Result<Vec<u8>> {
        let n_in = self.cfg.block_inputs();
        if coeffs.shape() != [self.cfg.blocks(), n_in] {
            return invalid(format!(
                "synthesize expects [{}, {n_in}] coefficients, got {:?}",
                self.cfg.blocks(),
                coeffs.shape()
            ));
        }
        let (w, h, kc) = (self.cfg.width, self.cfg.height, self.cfg.coeffs_per_channel);
        let bw = w / B;
        let mut out = vec![0u8; self.cfg.frame_bytes()];
        let mut blk = [0.0; B * B];
        let mut tmp = [0.0; B * B];
        for b in 0..self.cfg.blocks() {
            let (by, bx) = (b / bw, b % bw);
            for c in 0..3 {
                blk.fill(0.0);
                for (j, &pos) in self.zz[..kc].iter().enumerate() {
                    blk[pos] = coeffs.data()[b * n_in + 3 * j + c];
                }
                for k in 0..B {
                    for x in 0..B {
                        tmp[k * B + x] = blk[k * B + x];
                    }
                }
                for y in 0..B {
                    for x in 0..B {
                        blk[y * B + x] = (0..B).map(|k| self.dct[k][y] * tmp[k * B + x]).sum();
                    }
                }
                for y in 0..B {
                    for x in 0..B {
                        tmp[y * B + x] = (0..B).map(|k| self.dct[k][x] * blk[y * B + k]).sum();
                    }
                }
                let plane = &mut out[c * w * h..(c + 1) * w * h];
                for y in 0..B {
                    for x in 0..B {
                        let v = ((tmp[y * B + x] + 0.5) * 255.0).round().clamp(0.0, 255.0);
                        plane[(by * B + y) * w + bx * B + x] = v as u8;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Projection of coefficients `[blocks, 3·coeffs]` to the raw code `[1, L]`.
    pub fn project(&self, g: &mut Graph, store: &ParamStore, coeffs: Var) -> Result<Var> {
        let w = g.param(store, self.enc);
        let y = g.matmul(coeffs, w)?;
        let yt = g.transpose(y)?;
        g.reshape(yt, &[1, self.cfg.code_len()])
    }

    /// Code `[1, L]` back to coefficients `[blocks, 3·coeffs]`.
    pub fn unproject(&self, g: &mut Graph, store: &ParamStore, code: Var) -> Result<Var> {
        let y = g.reshape(code, &[self.cfg.code_per_block, self.cfg.blocks()])?;
        let yt = g.transpose(y)?;
        let w = g.param(store, self.dec);
        g.matmul(yt, w)
    }

    pub fn encode(&self, store: &ParamStore, frame: &[u8]) -> Result<Encoded> {
        let mut g = Graph::new();
        let c = g.constant(self.analyze(frame)?);
        let y = self.project(&mut g, store, c)?;
        let (frame, scale) = power_normalize(g.value(y).data())?;
        Ok(Encoded { frame, scale })
    }

    pub fn decode(&self, store: &ParamStore, code: &SemanticFrame, scale: f64) -> Result<Vec<u8>> {
        if code.len() != self.cfg.code_len() {
            return invalid(format!(
                "decoder expects code length {}, got {}",
                self.cfg.code_len(),
                code.len()
            ));
        }
        let mut g = Graph::new();
        let raw: Vec<f64> = code.as_slice().iter().map(|v| v * scale).collect();
        let c = g.constant(Tensor::row(raw));
        let coeffs = self.unproject(&mut g, store, c)?;
        self.synthesize(g.value(coeffs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, MotionSpec};
    use crate::metrics::psnr;

    fn small() -> CodecConfig {
        CodecConfig {
            width: 32,
            height: 16,
            coeffs_per_channel: 6,
            code_per_block: 12,
        }
    }

    #[test]
    fn zigzag_is_a_permutation_in_scan_order() {
        let z = zigzag();
        let mut seen = [false; 64];
        for &p in &z {
            assert!(!seen[p]);
            seen[p] = true;
        }
        assert_eq!(&z[..6], &[0, 1, 8, 16, 9, 2]);
        assert_eq!(z[63], 63);
    }

    #[test]
    fn dct_is_orthonormal() {
        let c = dct_matrix();
        for i in 0..B {
            for j in 0..B {
                let d: f64 = (0..B).map(|n| c[i][n] * c[j][n]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_coefficients_round_trip_losslessly() {
        let cfg = CodecConfig { coeffs_per_channel: 64, code_per_block: 192, ..small() };
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, "codec", cfg).unwrap();
        let spec = MotionSpec { seed: 3, ..("sinusoid:0,0:noise".parse().unwrap()) };
        let clip = generate_clip(&spec, 32, 16, 1).unwrap();
        let e = codec.encode(&store, clip.frame(0)).unwrap();
        assert_eq!(codec.decode(&store, &e.frame, e.scale).unwrap(), clip.frame(0));
    }

    #[test]
    fn constant_frame_survives_truncation() {
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, "codec", small()).unwrap();
        let mut frame = vec![0u8; 3 * 32 * 16];
        for (c, v) in [37u8, 140, 222].into_iter().enumerate() {
            frame[c * 512..(c + 1) * 512].fill(v);
        }
        let e = codec.encode(&store, &frame).unwrap();
        let back = codec.decode(&store, &e.frame, e.scale).unwrap();
        assert!(psnr(&frame, &back, 255.0).unwrap() > 30.0);
    }

    #[test]
    fn code_has_unit_symbol_power() {
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, "codec", small()).unwrap();
        let spec = MotionSpec { seed: 1, ..("rect:0,0:gradient".parse().unwrap()) };
        let clip = generate_clip(&spec, 32, 16, 1).unwrap();
        let e = codec.encode(&store, clip.frame(0)).unwrap();
        assert_eq!(e.frame.len(), 8 * 12);
        assert!((e.frame.symbol_power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_geometry() {
        let bad = [
            CodecConfig { width: 30, ..small() },
            CodecConfig { coeffs_per_channel: 0, ..small() },
            CodecConfig { coeffs_per_channel: 65, ..small() },
            CodecConfig { code_per_block: 0, ..small() },
            CodecConfig { width: 8, height: 8, coeffs_per_channel: 1, code_per_block: 385 },
            CodecConfig { width: 8, height: 8, coeffs_per_channel: 1, code_per_block: 3 },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let mut store = ParamStore::new();
        let codec = Codec::new(&mut store, "codec", small()).unwrap();
        assert!(codec.encode(&store, &[0u8; 10]).is_err());
        assert!(codec.decode(&store, &SemanticFrame::zeros(4).unwrap(), 1.0).is_err());
    }

    #[test]
    fn cbr_accounting() {
        let cfg = small();
        assert!((cfg.cbr() - (96.0 / 2.0) / (32.0 * 16.0 * 3.0)).abs() < 1e-12);
    }
}
