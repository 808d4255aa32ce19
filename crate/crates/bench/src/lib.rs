//! Shared inputs for the criterion benchmarks under `benches/`.

use lindiff_core::{RngStream, Tensor};

/// Token counts swept by the kernel benchmarks.
pub const SIZES: [usize; 4] = [1024, 2048, 4096, 8192];

/// Channel width of the kernel benchmarks.
pub const WIDTH: usize = 16;

/// `count` standard normal `[t, d]` tensors from one seed.
pub fn random_rows(count: usize, t: usize, d: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = RngStream::new(seed);
    (0..count).map(|_| Tensor::randn(&[t, d], 1.0, &mut rng)).collect()
}
