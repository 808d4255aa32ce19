//! Differentiable tensor substrate: dense tensors, a reverse-mode tape,
//! counter-based random streams and finite-difference gradient checking.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod real;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use graph::{BackCtx, Backward, Gradients, Graph, Var};
pub use ops::Activation;
pub use params::{Bound, Init, ParamSpec, ParamStore};
pub use real::Real;
pub use rng::RngStream;
pub use tensor::Tensor;
