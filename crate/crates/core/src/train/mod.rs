//! Quantile-regression training with a two-stage context curriculum.

mod config;
mod curriculum;
mod step;
mod task;

pub use config::{Stage, TaskMix, TrainConfig};
pub use curriculum::{run_curriculum, RunPaths, LOG_HEADER};
pub use step::{adam_update, task_loss, train_step, TrainState};
pub use task::{sample_task, Task, TaskKind};
