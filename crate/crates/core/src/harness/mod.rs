//! Synthetic data, training, ablations, benchmarks and output files.

pub mod ablate;
pub mod bench;
pub mod config;
pub mod data;
pub mod gradsuite;
pub mod optim;
pub mod output;
pub mod train;

pub use ablate::{ablate, AblationReport, Variant};
pub use bench::{bench, BenchConfig, BenchReport, BenchRow, Kernel};
pub use config::{DataConfig, TrainConfig};
pub use data::{gen_dataset, SyntheticVideoSpec};
pub use optim::{AdamW, AdamWConfig};
pub use output::{sample_checkpoint, write_samples, Manifest};
pub use train::{train, train_with, validation_mse, TrainOutcome};
