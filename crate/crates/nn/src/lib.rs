//! Minimal deterministic neural-network substrate: `f64` tensors, a tape
//! based reverse-mode graph, convolution/resampling layers, Adam and a
//! step-decay learning-rate schedule.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod schedule;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{NnError, Result};
pub use graph::{Graph, Var};
pub use layers::{Conv2d, ResidualBlock};
pub use params::ParamSet;
pub use schedule::LrSchedule;
pub use tensor::Tensor;
