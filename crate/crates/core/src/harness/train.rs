//! Training loop and validation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::backbone::checkpoint::Checkpoint;
use crate::backbone::config::ModelConfig;
use crate::backbone::model::forward;
use crate::backbone::params::init_params;
use crate::diffusion::{draw_training_noise, elbo_loss, q_sample, EmaState, ModelPredictor, Schedule};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::data::{gen_dataset, hflip};
use crate::harness::optim::AdamW;
use crate::numerics::graph::Graph;
use crate::numerics::params::ParamStore;
use crate::numerics::rng::RngStream;
use crate::numerics::tensor::Tensor;

pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LAST_GOOD: &str = "last_good.bin";

/// Independent random streams derived from the run seed.
pub struct Streams {
    pub init: RngStream,
    pub batch: RngStream,
    pub flip: RngStream,
    pub noise: RngStream,
    pub train_data_seed: u64,
    pub val_data_seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let root = RngStream::new(seed);
        Self {
            init: root.fork("init"),
            batch: root.fork("batch"),
            flip: root.fork("flip"),
            noise: root.fork("noise"),
            train_data_seed: root.fork("train-data").next_u64(),
            val_data_seed: root.fork("val-data").next_u64(),
        }
    }
}

/// Fresh parameters for a run seed. Independent of everything but the seed
/// and the model config.
pub fn initial_params(config: &ModelConfig, seed: u64) -> ParamStore<f32> {
    init_params(config, &mut Streams::new(seed).init)
}

/// Loss and gradient step on one batch `x0` of shape `[B, F, C, H, W]`.
/// Returns the loss before the update; parameters are untouched when the
/// loss is not finite.
pub fn train_step(
    config: &ModelConfig,
    params: &mut ParamStore<f32>,
    opt: &mut AdamW<f32>,
    x0: &Tensor<f32>,
    sched: &Schedule,
    noise: &mut RngStream,
) -> Result<f64> {
    let (t, eps) = draw_training_noise::<f32>(noise, x0.shape(), sched.steps());
    let xt = q_sample(x0, &t, &eps, sched)?;
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let xv = g.constant(xt);
    let target = g.constant(eps);
    let f = forward(&mut g, &bound, config, xv, &t)?;
    let loss_var = g.mse(f.out, target);
    let loss = g.value(loss_var).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("non-finite training loss at timesteps {t:?}")));
    }
    let grads = g.backward(loss_var);
    let per_param: Vec<_> = bound.vars().iter().map(|&v| grads.get(v)).collect();
    opt.step(params, &per_param)?;
    Ok(loss)
}

/// Mean noise-prediction error over `data` with a fixed noise stream, so
/// repeated calls on the same parameters agree exactly.
pub fn validation_mse(
    config: &ModelConfig,
    params: &ParamStore<f32>,
    data: &Tensor<f32>,
    sched: &Schedule,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    let n = data.shape()[0];
    let per = data.len() / n;
    let mut rng = RngStream::with_stream(seed, 0x7661_6c69);
    let mut model = ModelPredictor { config, params };
    let mut total = 0.0;
    for start in (0..n).step_by(batch) {
        let b = batch.min(n - start);
        let mut shape = data.shape().to_vec();
        shape[0] = b;
        let x0 = Tensor::new(&shape, data.data()[start * per..(start + b) * per].to_vec())?;
        total += b as f64 * elbo_loss(&mut model, &x0, sched, &mut rng)?;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Training loss per step.
    pub losses: Vec<f64>,
    /// `(step, validation MSE)` pairs; the last entry is the final model.
    pub validation: Vec<(usize, f64)>,
    pub checkpoint: Checkpoint,
    pub wall_ms: u128,
}

impl TrainOutcome {
    pub fn final_validation(&self) -> f64 {
        self.validation.last().map_or(f64::NAN, |v| v.1)
    }
}

fn checkpoint_of(config: &TrainConfig, step: u64, params: &ParamStore<f32>, ema: &EmaState<f32>) -> Checkpoint {
    Checkpoint {
        config: config.model.clone(),
        step,
        params: params.clone(),
        ema: Some(ema.shadow.clone()),
    }
}

/// Trains from scratch. With `out_dir` set, writes the loss trace,
/// periodic checkpoints and the config used.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    train_with(config, out_dir, |_, _| {})
}

/// [`train`] with a callback receiving `(step, loss)` after every step.
pub fn train_with(
    config: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    let sched = config.schedule()?;
    let mut streams = Streams::new(config.seed);
    let mut params: ParamStore<f32> = init_params(&config.model, &mut streams.init);
    let train_set = gen_dataset(&config.video_spec(streams.train_data_seed), config.data.train_clips)?;
    let val_set = gen_dataset(&config.video_spec(streams.val_data_seed), config.data.val_clips)?;
    let mut opt = AdamW::new(config.optim, &params);
    let mut ema = EmaState::new(&params, config.ema_decay);

    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), config.to_toml()?)?;
            let mut w = csv::Writer::from_path(dir.join(LOSS_CSV)).map_err(|e| Error::Serde(e.to_string()))?;
            w.write_record(["step", "loss", "wall_ms"])
                .map_err(|e| Error::Serde(e.to_string()))?;
            Some(w)
        }
        None => None,
    };
    let save = |ck: &Checkpoint, name: &str| -> Result<Option<PathBuf>> {
        match out_dir {
            Some(dir) => {
                let p = dir.join(name);
                ck.save(&p)?;
                Ok(Some(p))
            }
            None => Ok(None),
        }
    };

    let n = train_set.shape()[0];
    let per = train_set.len() / n;
    let mut shape = train_set.shape().to_vec();
    shape[0] = config.batch_size;
    let start = Instant::now();
    let mut losses = Vec::with_capacity(config.steps);
    let mut validation = Vec::new();
    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size * per);
        for _ in 0..config.batch_size {
            let i = streams.batch.range_inclusive(0, n - 1);
            let mut clip = train_set.data()[i * per..(i + 1) * per].to_vec();
            if config.hflip && streams.flip.bernoulli(0.5) {
                hflip(&mut clip, config.model.width);
            }
            batch.extend(clip);
        }
        let x0 = Tensor::new(&shape, batch)?;
        let loss = match train_step(&config.model, &mut params, &mut opt, &x0, &sched, &mut streams.noise) {
            Ok(l) => l,
            Err(Error::Numerical(msg)) => {
                let ck = checkpoint_of(config, step as u64 - 1, &params, &ema);
                let where_ = save(&ck, LAST_GOOD)?
                    .map(|p| format!("; last good parameters in {}", p.display()))
                    .unwrap_or_default();
                return Err(Error::Numerical(format!("step {step}: {msg}{where_}")));
            }
            Err(e) => return Err(e),
        };
        ema.update(&params)?;
        losses.push(loss);
        on_step(step, loss);
        if let Some(w) = csv.as_mut() {
            let ms = start.elapsed().as_millis();
            w.write_record([step.to_string(), format!("{loss:e}"), ms.to_string()])
                .map_err(|e| Error::Serde(e.to_string()))?;
        }
        if config.val_every > 0 && step % config.val_every == 0 && step < config.steps {
            let v = validation_mse(
                &config.model,
                &params,
                &val_set,
                &sched,
                config.val_batch,
                streams.val_data_seed,
            )?;
            validation.push((step, v));
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            save(&checkpoint_of(config, step as u64, &params, &ema), CHECKPOINT)?;
        }
    }
    if let Some(mut w) = csv {
        w.flush()?;
    }
    let v = validation_mse(
        &config.model,
        &params,
        &val_set,
        &sched,
        config.val_batch,
        streams.val_data_seed,
    )?;
    validation.push((config.steps, v));
    let checkpoint = checkpoint_of(config, config.steps as u64, &params, &ema);
    save(&checkpoint, CHECKPOINT)?;
    if let Some(dir) = out_dir {
        let mut f = fs::File::create(dir.join("validation.csv"))?;
        writeln!(f, "step,val_mse")?;
        for (s, v) in &validation {
            writeln!(f, "{s},{v:e}")?;
        }
    }
    Ok(TrainOutcome {
        losses,
        validation,
        checkpoint,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::DataConfig;

    fn small() -> TrainConfig {
        TrainConfig {
            steps: 3,
            batch_size: 2,
            checkpoint_every: 0,
            model: ModelConfig {
                d: 16,
                n_triplets: 1,
                frames: 2,
                height: 16,
                width: 16,
                t_max: 20,
                ..ModelConfig::toy()
            },
            data: DataConfig {
                train_clips: 4,
                val_clips: 4,
                radius: (2.0, 4.0),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn flip_does_not_change_init() {
        let a = small();
        let b = TrainConfig {
            hflip: false,
            ..a.clone()
        };
        let ra = train(&a, None).unwrap();
        let rb = train(&b, None).unwrap();
        let ia = initial_params(&a.model, a.seed);
        let ib = initial_params(&b.model, b.seed);
        assert_eq!(ia.tensors(), ib.tensors());
        assert_ne!(ra.losses, rb.losses);
    }

    #[test]
    fn writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let r = train(&small(), Some(dir.path())).unwrap();
        let csv = fs::read_to_string(dir.path().join(LOSS_CSV)).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "step,loss,wall_ms");
        assert_eq!(lines.len(), 4);
        let back = Checkpoint::load(&dir.path().join(CHECKPOINT)).unwrap();
        assert_eq!(back.params.tensors(), r.checkpoint.params.tensors());
        assert!(dir.path().join("config.toml").exists());
    }

    #[test]
    fn validation_is_repeatable() {
        let c = small();
        let sched = c.schedule().unwrap();
        let p = initial_params(&c.model, 0);
        let data = gen_dataset(&c.video_spec(5), 4).unwrap();
        let a = validation_mse(&c.model, &p, &data, &sched, 3, 1).unwrap();
        let b = validation_mse(&c.model, &p, &data, &sched, 3, 1).unwrap();
        assert_eq!(a, b);
    }
}
