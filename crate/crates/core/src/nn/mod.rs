//! Minimal differentiable-tensor substrate: dense tensors, a reverse-mode
//! tape, optimizers and schedulers, checkpoints and finite-difference checks.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, FORMAT_VERSION, MAGIC};
pub use gradcheck::{grad_check, rel_err, GradCheckReport, REL_ERR_FLOOR};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, Scheduler, SchedulerConfig};
pub use params::{seeded_rng, ParamStore};
pub use tape::{register_all, Grads, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{selu, sigmoid, softmax_in_place, Scalar, ShapeError, Tensor, SELU_ALPHA, SELU_LAMBDA};
