//! Sample files: one portable graymap or pixmap per frame plus a manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::checkpoint::{fingerprint, Checkpoint};
use crate::diffusion::{sample, ModelPredictor, Schedule};
use crate::error::{shape_err, Error, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clips: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub checkpoint_fingerprint: String,
    pub files: Vec<String>,
}

pub const MANIFEST: &str = "manifest.json";

fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

/// Writes `[B, F, C, H, W]` samples in `[-1, 1]`. One-channel frames become
/// `.pgm`, three-channel frames `.ppm`, anything else one `.pgm` per
/// channel.
pub fn write_samples(dir: &Path, video: &Tensor<f32>, seed: u64, fingerprint: &str) -> Result<Manifest> {
    let &[b, f, c, h, w] = video.shape() else {
        return shape_err(format!("samples must be [B, F, C, H, W], got {:?}", video.shape()));
    };
    fs::create_dir_all(dir)?;
    let plane = h * w;
    let mut files = Vec::new();
    for clip in 0..b {
        for frame in 0..f {
            let base = (clip * f + frame) * c * plane;
            let px = &video.data()[base..base + c * plane];
            if c == 3 {
                let name = format!("clip{clip:03}_frame{frame:03}.ppm");
                let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
                for i in 0..plane {
                    bytes.extend((0..3).map(|ch| to_byte(px[ch * plane + i])));
                }
                fs::write(dir.join(&name), bytes)?;
                files.push(name);
            } else {
                for ch in 0..c {
                    let name = if c == 1 {
                        format!("clip{clip:03}_frame{frame:03}.pgm")
                    } else {
                        format!("clip{clip:03}_frame{frame:03}_c{ch}.pgm")
                    };
                    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
                    bytes.extend(px[ch * plane..(ch + 1) * plane].iter().map(|&v| to_byte(v)));
                    fs::write(dir.join(&name), bytes)?;
                    files.push(name);
                }
            }
        }
    }
    let manifest = Manifest {
        clips: b,
        frames: f,
        channels: c,
        height: h,
        width: w,
        seed,
        checkpoint_fingerprint: fingerprint.to_string(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(dir.join(MANIFEST), json)?;
    Ok(manifest)
}

/// Draws `clips` videos from the checkpoint at `path`, using its averaged
/// parameters when present, and writes them with a manifest into `dir`.
pub fn sample_checkpoint(path: &Path, clips: usize, seed: u64, dir: &Path) -> Result<Manifest> {
    let bytes = fs::read(path)?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    let cfg = &ckpt.config;
    let sched = Schedule::scaled(cfg.t_max)?;
    let mut model = ModelPredictor {
        config: cfg,
        params: ckpt.sampling_params(),
    };
    let [f, c, h, w] = cfg.video_shape();
    let mut rng = RngStream::new(seed);
    let video = sample(&mut model, &[clips, f, c, h, w], &sched, &mut rng)?;
    write_samples(dir, &video, seed, &fingerprint(&bytes))
}
