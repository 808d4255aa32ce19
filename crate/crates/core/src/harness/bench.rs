//! Wall-clock scaling of the attention kernels and the model forward pass.

use std::fmt;
use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::backbone::config::ModelConfig;
use crate::backbone::model::predict;
use crate::backbone::params::init_params;
use crate::channel::channel_attention;
use crate::error::{config_err, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;
use crate::wkv::{naive_attention, wkv_scan, SeqLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Wkv,
    Channel,
    /// Row-at-a-time softmax self-attention.
    Quadratic,
    /// Full forward pass of the toy model; `T` counts tokens per clip.
    Model,
}

impl Kernel {
    pub const KERNELS: [Kernel; 3] = [Kernel::Wkv, Kernel::Channel, Kernel::Quadratic];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Wkv => "wkv_scan",
            Kernel::Channel => "channel_attention",
            Kernel::Quadratic => "quadratic_attention",
            Kernel::Model => "model_forward",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Kernel::Wkv, Kernel::Channel, Kernel::Quadratic, Kernel::Model]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kernel: Kernel,
    pub t: usize,
    pub d: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Sizes left out and why.
    pub notes: Vec<String>,
}

impl BenchReport {
    /// `(t, 2t, median(2t) / median(t))` for consecutive doublings.
    pub fn doubling_ratios(&self, kernel: Kernel) -> Vec<(usize, usize, f64)> {
        let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.kernel == kernel).collect();
        let mut out = Vec::new();
        for a in &rows {
            if let Some(b) = rows.iter().find(|b| b.t == 2 * a.t) {
                out.push((a.t, b.t, b.median_ns as f64 / a.median_ns as f64));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kernel,T,D,median_ns,p10_ns,p90_ns\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.kernel, r.t, r.d, r.median_ns, r.p10_ns, r.p90_ns
            ));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub kernels: Vec<Kernel>,
    pub sizes: Vec<usize>,
    pub d: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            kernels: Kernel::KERNELS.to_vec(),
            sizes: vec![1024, 2048, 4096, 8192],
            d: 16,
            reps: 30,
            warmup: 3,
            seed: 0,
        }
    }
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

/// Runs `warmup` untimed passes of every job, then `reps` timed rounds
/// visiting the jobs in turn, so slow drifts in machine speed land on all
/// sizes alike. Returns sorted times per job.
fn time_interleaved(reps: usize, warmup: usize, jobs: &mut [Box<dyn FnMut() + '_>]) -> Vec<Vec<u64>> {
    for _ in 0..warmup {
        jobs.iter_mut().for_each(|f| f());
    }
    let mut times = vec![Vec::with_capacity(reps); jobs.len()];
    for _ in 0..reps {
        for (f, out) in jobs.iter_mut().zip(&mut times) {
            let t = Instant::now();
            f();
            out.push(t.elapsed().as_nanos() as u64);
        }
    }
    times.iter_mut().for_each(|t| t.sort_unstable());
    times
}

fn model_config(tokens: usize) -> Result<ModelConfig> {
    let base = ModelConfig::toy();
    if !tokens.is_multiple_of(base.sites()) {
        return config_err(format!(
            "model benchmark needs token counts divisible by {}",
            base.sites()
        ));
    }
    Ok(ModelConfig {
        frames: tokens / base.sites(),
        ..base
    })
}

/// Times every kernel at every size, single-threaded, `reps` repetitions
/// after `warmup` untimed runs. Sizes of one kernel are timed interleaved.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.reps < 1 || cfg.d == 0 {
        return config_err("bench needs at least one repetition and positive width");
    }
    let resolution = timer_resolution().as_nanos() as u64;
    let mut report = BenchReport::default();
    let mut rng = RngStream::new(cfg.seed);
    let d = cfg.d;
    for &kernel in &cfg.kernels {
        let mut jobs: Vec<Box<dyn FnMut()>> = Vec::new();
        for &t in &cfg.sizes {
            let rand = |rng: &mut RngStream| Tensor::<f32>::randn(&[t, d], 1.0, rng);
            jobs.push(match kernel {
                Kernel::Wkv => {
                    let (k, v) = (rand(&mut rng), rand(&mut rng));
                    let w = Tensor::<f32>::randn(&[d], 1.0, &mut rng);
                    let u = Tensor::<f32>::randn(&[d], 1.0, &mut rng);
                    Box::new(move || {
                        black_box(wkv_scan(&k, &v, &w, &u, SeqLayout::single(t)).unwrap());
                    })
                }
                Kernel::Channel => {
                    let (q, k, v) = (rand(&mut rng), rand(&mut rng), rand(&mut rng));
                    Box::new(move || {
                        black_box(channel_attention(&q, &k, &v, 0.0, 1).unwrap());
                    })
                }
                Kernel::Quadratic => {
                    let (q, k, v) = (rand(&mut rng), rand(&mut rng), rand(&mut rng));
                    Box::new(move || {
                        black_box(naive_attention(q.data(), k.data(), v.data(), t, d));
                    })
                }
                Kernel::Model => {
                    let mc = model_config(t)?;
                    let params = init_params::<f32>(&mc, &mut rng);
                    let mut shape = vec![1];
                    shape.extend(mc.video_shape());
                    let x = Tensor::<f32>::randn(&shape, 1.0, &mut rng);
                    Box::new(move || {
                        black_box(predict(&params, &mc, &x, &[10]).unwrap());
                    })
                }
            });
        }
        let all = time_interleaved(cfg.reps, cfg.warmup, &mut jobs);
        for (&t, times) in cfg.sizes.iter().zip(&all) {
            let median = percentile(times, 0.5);
            if median < 100 * resolution {
                report.notes.push(format!(
                    "{kernel} at T={t}: median {median} ns is within 100x of the {resolution} ns timer resolution; excluded"
                ));
                continue;
            }
            report.rows.push(BenchRow {
                kernel,
                t,
                d: if kernel == Kernel::Model {
                    ModelConfig::toy().d
                } else {
                    d
                },
                median_ns: median,
                p10_ns: percentile(times, 0.1),
                p90_ns: percentile(times, 0.9),
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_produces_rows_and_ratios() {
        let r = bench(&BenchConfig {
            kernels: vec![Kernel::Wkv, Kernel::Quadratic],
            sizes: vec![256, 512],
            reps: 3,
            warmup: 1,
            ..Default::default()
        })
        .unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("kernel,T,D,median_ns,p10_ns,p90_ns\n"));
        for row in &r.rows {
            assert!(row.p10_ns <= row.median_ns && row.median_ns <= row.p90_ns);
        }
        assert_eq!(r.rows.len() + r.notes.len(), 4);
        if r.rows.len() == 4 {
            assert_eq!(r.doubling_ratios(Kernel::Wkv).len(), 1);
        }
    }

    #[test]
    fn model_sizes_must_fill_frames() {
        assert!(model_config(100).is_err());
        assert_eq!(model_config(128).unwrap().frames, 2);
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in [Kernel::Wkv, Kernel::Channel, Kernel::Quadratic, Kernel::Model] {
            assert_eq!(Kernel::parse(k.name()), Some(k));
        }
    }
}
