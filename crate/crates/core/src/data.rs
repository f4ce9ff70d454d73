//! Synthetic clips with exact integer motion, and the raw planar clip format:
//! `frame_count` frames of `3·height·width` bytes (R plane, G plane, B plane)
//! plus a JSON sidecar at `path + ".meta.json"`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: u32,
    data: Vec<u8>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    frame_count: usize,
    fps: u32,
}

impl VideoClip {
    pub fn new(width: usize, height: usize, frame_count: usize, fps: u32, data: Vec<u8>) -> Result<Self> {
        let expected = frame_count * 3 * width * height;
        if width == 0 || height == 0 {
            return invalid("clip dimensions must be positive");
        }
        if data.len() != expected {
            return Err(Error::Format(format!(
                "clip payload: expected {expected} bytes, found {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            frame_count,
            fps,
            data,
        })
    }

    pub fn frame_bytes(&self) -> usize {
        3 * self.width * self.height
    }

    /// Planar RGB bytes of frame `i`.
    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.frame_bytes();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.frame_bytes())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Rectangle,
    Sinusoid,
    Checker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Background {
    Flat,
    Gradient,
    Noise,
}

/// `KIND:VX,VY[:BACKGROUND]`, e.g. `rect:2,0` or `sinusoid:1,-1:gradient`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionSpec {
    pub kind: ObjectKind,
    pub velocity: (i32, i32),
    pub background: Background,
    pub seed: u64,
}

impl FromStr for MotionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("motion spec `{s}`: expected KIND:VX,VY[:BACKGROUND]"));
        let mut parts = s.split(':');
        let kind = match parts.next().ok_or_else(bad)?.to_ascii_lowercase().as_str() {
            "rect" | "rectangle" => ObjectKind::Rectangle,
            "sinusoid" | "sine" => ObjectKind::Sinusoid,
            "checker" => ObjectKind::Checker,
            other => return invalid(format!("unknown object kind `{other}`")),
        };
        let (vx, vy) = parts.next().ok_or_else(bad)?.split_once(',').ok_or_else(bad)?;
        let velocity = (
            vx.trim().parse().map_err(|_| bad())?,
            vy.trim().parse().map_err(|_| bad())?,
        );
        let background = match parts.next().map(|b| b.to_ascii_lowercase()) {
            None => Background::Flat,
            Some(b) => match b.as_str() {
                "flat" => Background::Flat,
                "gradient" => Background::Gradient,
                "noise" => Background::Noise,
                other => return invalid(format!("unknown background `{other}`")),
            },
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(Self {
            kind,
            velocity,
            background,
            seed: 0,
        })
    }
}

impl fmt::Display for MotionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ObjectKind::Rectangle => "rect",
            ObjectKind::Sinusoid => "sinusoid",
            ObjectKind::Checker => "checker",
        };
        let bg = match self.background {
            Background::Flat => "flat",
            Background::Gradient => "gradient",
            Background::Noise => "noise",
        };
        write!(f, "{kind}:{},{}:{bg}", self.velocity.0, self.velocity.1)
    }
}

/// `round(127·sin(2πk/64))`, so the texture path stays integer-only.
const SINE: [i32; 64] = [
    0, 12, 25, 37, 49, 60, 71, 81, 90, 98, 106, 112, 117, 122, 125, 126, 127, 126, 125, 122, 117,
    112, 106, 98, 90, 81, 71, 60, 49, 37, 25, 12, 0, -12, -25, -37, -49, -60, -71, -81, -90, -98,
    -106, -112, -117, -122, -125, -126, -127, -126, -125, -122, -117, -112, -106, -98, -90, -81,
    -71, -60, -49, -37, -25, -12,
];

fn random_color<R: Rng>(rng: &mut R) -> [u8; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn canvas(spec: &MotionSpec, w: usize, h: usize) -> Vec<u8> {
    let mut rng = seeded(spec.seed);
    let plane = w * h;
    let mut px = vec![0u8; 3 * plane];
    let bg = random_color(&mut rng);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                px[c * plane + y * w + x] = match spec.background {
                    Background::Flat => bg[c],
                    Background::Gradient => ((bg[c] as usize / 2 + 128 * x / w) % 256) as u8,
                    Background::Noise => rng.random(),
                };
            }
        }
    }
    match spec.kind {
        ObjectKind::Rectangle => {
            let rw = rng.random_range(w / 4..=w / 2);
            let rh = rng.random_range(h / 4..=h / 2);
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let mut color = random_color(&mut rng);
            if color.iter().zip(&bg).all(|(a, b)| a.abs_diff(*b) < 64) {
                color[0] = bg[0].wrapping_add(128);
            }
            for y in y0..y0 + rh {
                for x in x0..x0 + rw {
                    for c in 0..3 {
                        px[c * plane + (y % h) * w + x % w] = color[c];
                    }
                }
            }
        }
        ObjectKind::Sinusoid => {
            let fx = rng.random_range(1..=3i64);
            let fy = rng.random_range(0..=2i64);
            let phase: [i64; 3] = [rng.random_range(0..64), rng.random_range(0..64), rng.random_range(0..64)];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let k = (fx * 64 * x as i64 / w as i64 + fy * 64 * y as i64 / h as i64 + phase[c])
                            .rem_euclid(64) as usize;
                        let v = px[c * plane + y * w + x] as i32 / 2 + 64 + SINE[k] / 2;
                        px[c * plane + y * w + x] = v.clamp(0, 255) as u8;
                    }
                }
            }
        }
        ObjectKind::Checker => {
            let other = random_color(&mut rng);
            for y in 0..h {
                for x in 0..w {
                    if (x / 8 + y / 8) % 2 == 1 {
                        for c in 0..3 {
                            px[c * plane + y * w + x] = other[c];
                        }
                    }
                }
            }
        }
    }
    px
}

/// Frame `t` is the seeded canvas circularly shifted by `t·velocity`.
pub fn generate_clip(spec: &MotionSpec, width: usize, height: usize, frame_count: usize) -> Result<VideoClip> {
    if width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0 {
        return invalid(format!(
            "frame size {width}x{height} must be positive multiples of 8"
        ));
    }
    if frame_count == 0 {
        return invalid("frame count must be positive");
    }
    let limit = (width.min(height) / 4) as f64;
    let (vx, vy) = spec.velocity;
    if ((vx as f64).powi(2) + (vy as f64).powi(2)).sqrt() > limit {
        return invalid(format!(
            "velocity ({vx},{vy}) exceeds min(W,H)/4 = {limit} pixels per frame"
        ));
    }
    let base = canvas(spec, width, height);
    let plane = width * height;
    let mut data = Vec::with_capacity(frame_count * 3 * plane);
    for t in 0..frame_count as i64 {
        let dx = (t * vx as i64).rem_euclid(width as i64) as usize;
        let dy = (t * vy as i64).rem_euclid(height as i64) as usize;
        for c in 0..3 {
            for y in 0..height {
                let sy = (y + height - dy) % height;
                for x in 0..width {
                    let sx = (x + width - dx) % width;
                    data.push(base[c * plane + sy * width + sx]);
                }
            }
        }
    }
    VideoClip::new(width, height, frame_count, 30, data)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    fs::write(path, &clip.data)?;
    let meta = Sidecar {
        width: clip.width,
        height: clip.height,
        frame_count: clip.frame_count,
        fps: clip.fps,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let meta_path = sidecar_path(path);
    let raw = fs::read(&meta_path)
        .map_err(|e| Error::Format(format!("cannot read sidecar {}: {e}", meta_path.display())))?;
    let meta: Sidecar = serde_json::from_slice(&raw)
        .map_err(|e| Error::Format(format!("invalid sidecar {}: {e}", meta_path.display())))?;
    let data = fs::read(path)?;
    VideoClip::new(meta.width, meta.height, meta.frame_count, meta.fps, data)
}
