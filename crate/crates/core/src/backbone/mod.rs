//! The denoiser: patch embedding, groups of spatial, temporal and channel
//! blocks under adaLN-Zero timestep conditioning, and the output head.

pub mod accounting;
pub mod checkpoint;
pub mod config;
pub mod model;
pub mod params;

pub use accounting::{count_flops, count_flops_quadratic_twin};
pub use checkpoint::Checkpoint;
pub use config::{AttentionKind, BlockKind, ModelConfig};
pub use model::{forward, predict, timestep_features, Forward};
pub use params::{count_params, init_params, param_specs};
