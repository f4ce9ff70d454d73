//! PSNR and MS-SSIM on planar 8-bit RGB frames.

use crate::error::{invalid, Result};

/// Reported for identical frames instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

pub fn psnr(a: &[u8], b: &[u8], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return invalid(format!("psnr: frame sizes {} and {} differ", a.len(), b.len()));
    }
    let sse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse / a.len() as f64;
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsimOptions {
    /// Use fewer scales (with renormalised weights) when the frame is smaller
    /// than 176 pixels on a side.
    pub allow_scale_reduction: bool,
}

impl Default for MsSsimOptions {
    fn default() -> Self {
        Self {
            allow_scale_reduction: true,
        }
    }
}

/// Number of scales usable for a `width × height` frame.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut n = 0;
    while n < MS_SSIM_WEIGHTS.len() && side >= WINDOW {
        n += 1;
        side /= 2;
    }
    n
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = (K1 * 255.0) * (K1 * 255.0);
    let c2 = (K2 * 255.0) * (K2 * 255.0);
    let prod = |f: fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>();
    let (mu_a, ow, oh) = filter(a, w, h, k);
    let (mu_b, ..) = filter(b, w, h, k);
    let (aa, ..) = filter(&prod(|x, _| x * x), w, h, k);
    let (bb, ..) = filter(&prod(|_, y| y * y), w, h, k);
    let (ab, ..) = filter(&prod(|x, y| x * y), w, h, k);
    let n = (ow * oh) as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs_i = (2.0 * cov + c2) / (va + vb + c2);
        let l_i = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += cs_i;
        ssim += l_i * cs_i;
    }
    (ssim / n, cs / n)
}

fn downsample(img: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    (out, ow, oh)
}

fn ms_ssim_plane(a: &[u8], b: &[u8], w: usize, h: usize, scales: usize) -> f64 {
    let k = gaussian_window();
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let (mut w, mut h) = (w, h);
    let mut out = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_terms(&a, &b, w, h, &k);
        let weight = MS_SSIM_WEIGHTS[s] / wsum;
        let term = if s + 1 == scales { ssim } else { cs };
        out *= term.max(0.0).powf(weight);
        if s + 1 < scales {
            let (da, nw, nh) = downsample(&a, w, h);
            b = downsample(&b, w, h).0;
            a = da;
            (w, h) = (nw, nh);
        }
    }
    out.clamp(0.0, 1.0)
}

/// Multi-scale SSIM of two planar RGB frames, averaged over the channels.
pub fn ms_ssim(a: &[u8], b: &[u8], width: usize, height: usize, opts: MsSsimOptions) -> Result<f64> {
    let plane = width * height;
    if a.len() != 3 * plane || b.len() != 3 * plane {
        return invalid(format!(
            "ms_ssim: expected two {width}x{height} RGB frames, got {} and {} bytes",
            a.len(),
            b.len()
        ));
    }
    let scales = ms_ssim_scales(width, height);
    if scales == 0 || (scales < MS_SSIM_WEIGHTS.len() && !opts.allow_scale_reduction) {
        return invalid(format!(
            "ms_ssim: {width}x{height} supports {scales} of {} scales",
            MS_SSIM_WEIGHTS.len()
        ));
    }
    let total: f64 = (0..3)
        .map(|c| {
            let r = c * plane..(c + 1) * plane;
            ms_ssim_plane(&a[r.clone()], &b[r], width, height, scales)
        })
        .sum();
    Ok(total / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr_db: Vec<f64>,
    pub ms_ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, psnr_db: f64, ms_ssim: f64) {
        self.psnr_db.push(psnr_db);
        self.ms_ssim.push(ms_ssim);
    }

    pub fn mean_psnr(&self) -> f64 {
        mean_std(&self.psnr_db).0
    }

    pub fn mean_ms_ssim(&self) -> f64 {
        mean_std(&self.ms_ssim).0
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self {
            psnr_db: Vec::new(),
            ms_ssim: Vec::new(),
        }
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_clip, MotionSpec};
    use crate::rng::{normal_vec, seeded};

    fn texture(w: usize, h: usize, seed: u64) -> Vec<u8> {
        let spec = MotionSpec { seed, ..("sinusoid:0,0:noise".parse().unwrap()) };
        generate_clip(&spec, w, h, 1).unwrap().frame(0).to_vec()
    }

    #[test]
    fn psnr_cases() {
        let a = vec![100u8; 300];
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), 99.0);
        let b = vec![116u8; 300];
        let p = psnr(&a, &b, 255.0).unwrap();
        assert!((p - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-12, "{p}");
        assert!((p - 24.05).abs() < 0.01);
        let c: Vec<u8> = (0..300).map(|i| (i * 7 % 256) as u8).collect();
        assert_eq!(psnr(&a, &c, 255.0).unwrap(), psnr(&c, &a, 255.0).unwrap());
        assert!(psnr(&a, &c[..299], 255.0).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_variance() {
        let a = texture(32, 32, 1);
        let mut last = f64::INFINITY;
        for level in 1..=10 {
            let std = 2.0 * level as f64;
            let mut total = 0.0;
            for trial in 0..20 {
                let noise = normal_vec(&mut seeded(1000 * level + trial), a.len());
                let b: Vec<u8> = a
                    .iter()
                    .zip(&noise)
                    .map(|(&x, n)| (x as f64 + std * n).round().clamp(0.0, 255.0) as u8)
                    .collect();
                total += psnr(&a, &b, 255.0).unwrap();
            }
            let mean = total / 20.0;
            assert!(mean < last, "level {level}: {mean} !< {last}");
            last = mean;
        }
    }

    #[test]
    fn ms_ssim_identity_is_one() {
        let a = texture(64, 48, 2);
        assert_eq!(ms_ssim(&a, &a, 64, 48, MsSsimOptions::default()).unwrap(), 1.0);
    }

    #[test]
    fn ms_ssim_full_scale_identity() {
        let a = texture(176, 176, 3);
        assert_eq!(ms_ssim_scales(176, 176), 5);
        assert_eq!(ms_ssim(&a, &a, 176, 176, MsSsimOptions { allow_scale_reduction: false }).unwrap(), 1.0);
    }

    #[test]
    fn ms_ssim_inverted_is_low() {
        let a = texture(128, 128, 4);
        let inv: Vec<u8> = a.iter().map(|v| 255 - v).collect();
        let v = ms_ssim(&a, &inv, 128, 128, MsSsimOptions::default()).unwrap();
        assert!((0.0..0.5).contains(&v), "{v}");
    }

    #[test]
    fn ms_ssim_nearly_invariant_to_common_offset() {
        let a = texture(64, 64, 5);
        let noise = normal_vec(&mut seeded(6), a.len());
        let b: Vec<u8> = a.iter().zip(&noise).map(|(&x, n)| (x as f64 + 6.0 * n).round().clamp(0.0, 200.0) as u8).collect();
        let a: Vec<u8> = a.iter().map(|&x| x.min(200)).collect();
        let base = ms_ssim(&a, &b, 64, 64, MsSsimOptions::default()).unwrap();
        let a2: Vec<u8> = a.iter().map(|x| x + 40).collect();
        let b2: Vec<u8> = b.iter().map(|x| x + 40).collect();
        let shifted = ms_ssim(&a2, &b2, 64, 64, MsSsimOptions::default()).unwrap();
        assert!((base - shifted).abs() < 1e-3, "{base} vs {shifted}");
    }

    #[test]
    fn ms_ssim_scale_reduction() {
        assert_eq!(ms_ssim_scales(128, 128), 4);
        assert_eq!(ms_ssim_scales(32, 32), 2);
        assert_eq!(ms_ssim_scales(8, 8), 0);
        let a = texture(32, 32, 7);
        assert!(ms_ssim(&a, &a, 32, 32, MsSsimOptions { allow_scale_reduction: false }).is_err());
        let tiny = vec![0u8; 3 * 64];
        assert!(ms_ssim(&tiny, &tiny, 8, 8, MsSsimOptions::default()).is_err());
        assert!(ms_ssim(&a, &a[..10], 32, 32, MsSsimOptions::default()).is_err());
    }

    #[test]
    fn ms_ssim_in_unit_interval() {
        for seed in 0..5 {
            let a = texture(48, 48, seed);
            let b = texture(48, 48, seed + 100);
            let v = ms_ssim(&a, &b, 48, 48, MsSsimOptions::default()).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }
}
