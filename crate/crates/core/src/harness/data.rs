//! Synthetic clips of soft-edged blobs drifting with constant velocity and
//! bouncing off the frame borders.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticVideoSpec {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub blobs: usize,
    /// Speed range in pixels per frame.
    pub speed: (f64, f64),
    pub radius: (f64, f64),
    /// Width of the soft edge in pixels.
    pub edge: f64,
    pub seed: u64,
}

impl Default for SyntheticVideoSpec {
    fn default() -> Self {
        Self {
            frames: 8,
            channels: 1,
            height: 32,
            width: 32,
            blobs: 2,
            speed: (0.5, 2.0),
            radius: (3.0, 6.0),
            edge: 1.0,
            seed: 0,
        }
    }
}

/// One blob's state: center at frame 0, velocity, radius, per-channel level.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: (f64, f64),
    pub velocity: (f64, f64),
    pub radius: f64,
    pub level: Vec<f64>,
}

/// Folds a free coordinate into `[lo, hi]` by mirror reflection.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

impl SyntheticVideoSpec {
    pub fn validate(&self) -> Result<()> {
        let min_side = self.height.min(self.width) as f64;
        if self.frames == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return config_err("video extents must be positive");
        }
        if !(0.0 < self.radius.0 && self.radius.0 <= self.radius.1) {
            return config_err(format!("bad radius range {:?}", self.radius));
        }
        if self.radius.1 >= min_side / 2.0 {
            return config_err(format!(
                "blob radius {} does not fit a {}x{} frame",
                self.radius.1, self.height, self.width
            ));
        }
        if !(0.0 <= self.speed.0 && self.speed.0 <= self.speed.1) || self.edge <= 0.0 {
            return config_err("speed range must be ordered and non-negative, edge positive");
        }
        Ok(())
    }

    pub fn clip_len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn draw_blobs(&self, rng: &mut RngStream) -> Vec<Blob> {
        (0..self.blobs)
            .map(|_| {
                let u = |rng: &mut RngStream, lo: f64, hi: f64| lo + (hi - lo) * rng.next_uniform();
                let radius = u(rng, self.radius.0, self.radius.1);
                let cx = u(rng, radius, self.width as f64 - 1.0 - radius);
                let cy = u(rng, radius, self.height as f64 - 1.0 - radius);
                let speed = u(rng, self.speed.0, self.speed.1);
                let angle = u(rng, 0.0, std::f64::consts::TAU);
                let level = (0..self.channels).map(|_| u(rng, 0.5, 1.0)).collect();
                Blob {
                    center: (cx, cy),
                    velocity: (speed * angle.cos(), speed * angle.sin()),
                    radius,
                    level,
                }
            })
            .collect()
    }

    /// Center of `blob` at frame `f` after reflections.
    pub fn position(&self, blob: &Blob, f: usize) -> (f64, f64) {
        let r = blob.radius;
        let x = blob.center.0 + blob.velocity.0 * f as f64;
        let y = blob.center.1 + blob.velocity.1 * f as f64;
        (
            reflect(x, r, self.width as f64 - 1.0 - r),
            reflect(y, r, self.height as f64 - 1.0 - r),
        )
    }

    /// Renders `[F, C, H, W]` with values in `[-1, 1]`.
    pub fn render(&self, blobs: &[Blob]) -> Vec<f32> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0f64; self.clip_len()];
        for f in 0..self.frames {
            for b in blobs {
                let (bx, by) = self.position(b, f);
                for y in 0..h {
                    for x in 0..w {
                        let dist = ((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)).sqrt();
                        let a = 1.0 / (1.0 + ((dist - b.radius) / self.edge).exp());
                        for ch in 0..c {
                            out[((f * c + ch) * h + y) * w + x] += a * b.level[ch];
                        }
                    }
                }
            }
        }
        out.into_iter().map(|v| (2.0 * v.min(1.0) - 1.0) as f32).collect()
    }
}

/// `n_clips` clips as one `[n, F, C, H, W]` tensor. Clip `i` depends only on
/// `(spec.seed, i)`.
pub fn gen_dataset(spec: &SyntheticVideoSpec, n_clips: usize) -> Result<Tensor<f32>> {
    spec.validate()?;
    let mut data = Vec::with_capacity(n_clips * spec.clip_len());
    for i in 0..n_clips {
        let mut rng = RngStream::with_stream(spec.seed, i as u64);
        data.extend(spec.render(&spec.draw_blobs(&mut rng)));
    }
    Tensor::new(&[n_clips, spec.frames, spec.channels, spec.height, spec.width], data)
}

/// Mirrors every frame of a `[.., H, W]` buffer left to right in place.
pub fn hflip(data: &mut [f32], width: usize) {
    for row in data.chunks_exact_mut(width) {
        row.reverse();
    }
}
