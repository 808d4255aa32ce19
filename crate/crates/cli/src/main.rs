//! Command-line entry point: training, sampling, benchmarks, ablations,
//! gradient checks and model accounting.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lindiff_core::backbone::{count_flops, count_flops_quadratic_twin, count_params};
use lindiff_core::harness::gradsuite::{gradient_suite, OPS};
use lindiff_core::harness::{ablate, bench, sample_checkpoint, train_with, BenchConfig, Kernel, Variant};
use lindiff_core::{ModelConfig, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "lindiff",
    version,
    about = "Linear-attention video diffusion on synthetic clips"
)]
struct Cli {
    /// TOML training config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Checkpoint to sample from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on synthetic blob videos, writing loss.csv and checkpoints.
    Train {
        /// Overrides the config step budget.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Draw clips from a checkpoint into image files and a manifest.
    Sample {
        #[arg(long, default_value_t = 4)]
        clips: usize,
    },
    /// Time the attention kernels at doubling token counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [1024, 2048, 4096, 8192])]
        sizes: Vec<usize>,
        /// Any of wkv_scan, channel_attention, quadratic_attention, model_forward.
        #[arg(long, value_delimiter = ',', default_values = ["wkv_scan", "channel_attention", "quadratic_attention"])]
        kernels: Vec<String>,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 30)]
        reps: usize,
    },
    /// Train the four component variants on several seeds.
    Ablate {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Overrides the config step budget.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Finite-difference check of every learnable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Parameter and FLOP counts for a preset or the config's model.
    Count {
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Small,
    Large,
    Toy,
}

fn load_config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Train { steps } => {
            let mut cfg = load_config(&cli)?;
            if let Some(s) = *steps {
                cfg.steps = s;
            }
            let every = (cfg.steps / 20).max(1);
            let out = train_with(&cfg, Some(&cli.out_dir), |step, loss| {
                if step % every == 0 {
                    eprintln!("step {step:>6}  loss {loss:.5}");
                }
            })?;
            for (step, mse) in &out.validation {
                println!("validation step {step}: eps-mse {mse:.5}");
            }
            println!(
                "trained {} steps in {:.1} s, outputs in {}",
                cfg.steps,
                out.wall_ms as f64 / 1e3,
                cli.out_dir.display()
            );
        }
        Command::Sample { clips } => {
            let Some(ckpt) = &cli.checkpoint else {
                bail!("sample needs --checkpoint");
            };
            let m = sample_checkpoint(ckpt, *clips, cli.seed.unwrap_or(0), &cli.out_dir)?;
            println!(
                "wrote {} files for {} clips to {}",
                m.files.len(),
                m.clips,
                cli.out_dir.display()
            );
        }
        Command::Bench {
            sizes,
            kernels,
            width,
            reps,
        } => {
            let kernels = kernels
                .iter()
                .map(|k| Kernel::parse(k).with_context(|| format!("unknown kernel {k}")))
                .collect::<Result<Vec<_>>>()?;
            let cfg = BenchConfig {
                kernels: kernels.clone(),
                sizes: sizes.clone(),
                d: *width,
                reps: *reps,
                seed: cli.seed.unwrap_or(0),
                ..BenchConfig::default()
            };
            let report = bench(&cfg)?;
            let path = write(&cli.out_dir, "bench.csv", &report.to_csv())?;
            for note in &report.notes {
                println!("note: {note}");
            }
            for k in kernels {
                for (a, b, r) in report.doubling_ratios(k) {
                    println!("{k:>9} {a:>6} -> {b:<6} x{r:.2}");
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Ablate { seeds, steps } => {
            let mut cfg = load_config(&cli)?;
            if let Some(s) = *steps {
                cfg.steps = s;
            }
            let seed_list: Vec<u64> = (0..*seeds).map(|i| cfg.seed + i).collect();
            let report = ablate(&cfg, &Variant::ALL, &seed_list, |v, seed, mse| {
                eprintln!("{v:>14} seed {seed}: eps-mse {mse:.5}");
            })?;
            let path = write(&cli.out_dir, "ablation.csv", &report.to_csv())?;
            for v in Variant::ALL {
                println!("{v:>14} mean {:.5}", report.mean(v).unwrap_or(f64::NAN));
            }
            println!("trend holds: {}", report.trend_holds());
            println!("wrote {}", path.display());
        }
        Command::Gradcheck { seeds } => {
            let mut failed = false;
            for r in gradient_suite(&OPS, *seeds)? {
                let ok = r.worst.max_rel_err < 1e-3;
                failed |= !ok;
                println!(
                    "{:<18} {} seeds  max rel err {:.2e}  {}",
                    r.name,
                    r.seeds,
                    r.worst.max_rel_err,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed {
                bail!("gradient check failed");
            }
        }
        Command::Count { preset } => {
            let model = match preset {
                Some(Preset::Small) => ModelConfig::small(),
                Some(Preset::Large) => ModelConfig::large(),
                Some(Preset::Toy) => ModelConfig::toy(),
                None => load_config(&cli)?.model,
            };
            model.validate()?;
            let (flops, twin) = (count_flops(&model), count_flops_quadratic_twin(&model));
            println!("params            {}", count_params(&model));
            println!("gflops            {:.2}", flops as f64 / 1e9);
            println!("gflops quadratic  {:.2}", twin as f64 / 1e9);
            println!("tokens            {}", model.tokens());
        }
    }
    Ok(())
}
