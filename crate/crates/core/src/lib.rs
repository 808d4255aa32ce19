//! Video diffusion transformer with linear-complexity attention along every
//! axis: WKV attention over space and time, transposed channel attention, and
//! residual value guidance from the input embedding.

pub mod backbone;
pub mod channel;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod resvgm;
pub mod wkv;

pub use backbone::{AttentionKind, Checkpoint, ModelConfig};
pub use error::{Error, Result};
pub use harness::TrainConfig;
pub use numerics::{Graph, RngStream, Tensor, Var};
