//! Maximum-likelihood training: batched gradients, Adam with warmup and
//! exponential decay, parameter averaging and the training loop.

pub mod adam;
pub mod ema;
pub mod grad;
pub mod gradcheck;
pub mod schedule;
pub mod trainer;

pub use adam::AdamState;
pub use ema::{EmaMode, EmaState};
pub use grad::{backward, threads_from_env};
pub use gradcheck::{check_gradients, GradCheck};
pub use schedule::LrSchedule;
pub use trainer::{mean_nll, split_state, Metric, MetricSplit, TrainConfig, Trainer};
