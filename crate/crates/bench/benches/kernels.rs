//! Attention kernels at doubling token counts: the two linear kernels
//! against dense softmax attention.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lindiff_bench::{random_rows, SIZES, WIDTH};
use lindiff_core::channel::channel_attention;
use lindiff_core::wkv::{naive_attention, wkv_scan, SeqLayout};
use lindiff_core::Tensor;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    group.sample_size(30).warm_up_time(Duration::from_millis(500));
    for &t in &SIZES {
        let x = random_rows(3, t, WIDTH, t as u64);
        let (w, u) = (Tensor::<f32>::zeros(&[WIDTH]), Tensor::<f32>::zeros(&[WIDTH]));
        group.throughput(Throughput::Elements(t as u64));
        group.bench_with_input(BenchmarkId::new("wkv_scan", t), &t, |b, &t| {
            b.iter(|| black_box(wkv_scan(&x[0], &x[1], &w, &u, SeqLayout::single(t)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("channel_attention", t), &t, |b, _| {
            b.iter(|| black_box(channel_attention(&x[0], &x[1], &x[2], 0.0, 1).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("quadratic", t), &t, |b, &t| {
            b.iter(|| black_box(naive_attention(x[0].data(), x[1].data(), x[2].data(), t, WIDTH)))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
