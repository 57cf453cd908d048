//! Dense tensors, reverse-mode autodiff, transformer primitives, AdamW and
//! the learning-rate schedule.

mod attention;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod mat;
mod optim;
mod schedule;
mod tensor;

pub use attention::KeyMask;
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use mat::Mat;
pub use optim::{adamw_step, AdamWConfig, OptimizerState, Precision};
pub use schedule::{lr_at, LrSchedule};
pub use tensor::{ParamId, ParamStore, Tensor};
