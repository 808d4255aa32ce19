//! Whole-denoiser forward and training step on the toy configuration.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lindiff_core::backbone::predict;
use lindiff_core::diffusion::Schedule;
use lindiff_core::harness::optim::AdamW;
use lindiff_core::harness::train::{initial_params, train_step};
use lindiff_core::{ModelConfig, RngStream, Tensor, TrainConfig};

fn model(c: &mut Criterion) {
    let cfg = TrainConfig::default();
    let shape = [cfg.batch_size, 8, 1, 32, 32];
    let mut rng = RngStream::new(0);
    let x = Tensor::<f32>::randn(&shape, 1.0, &mut rng);
    let params = initial_params(&ModelConfig::toy(), 0);
    let mut group = c.benchmark_group("toy_model");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| black_box(predict(&params, &cfg.model, &x, &[25; 4]).unwrap()))
    });
    let sched = Schedule::scaled(cfg.model.t_max).unwrap();
    group.bench_function("train_step", |b| {
        let mut p = params.clone();
        let mut opt = AdamW::new(cfg.optim, &p);
        b.iter(|| black_box(train_step(&cfg.model, &mut p, &mut opt, &x, &sched, &mut rng).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, model);
criterion_main!(benches);
