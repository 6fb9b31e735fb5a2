//! Closed-loop experiments: simulation, training by backpropagation through
//! time, the α-sweep, metrics and artifact writers.

pub mod adam;
pub mod io;
pub mod metrics;
pub mod rollout;
pub mod sweep;
pub mod train;

pub use adam::{adam_step, Adam, AdamConfig};
pub use metrics::{metrics, MetricsReport};
pub use rollout::{rollout, LogRow, Policy, RolloutLog, SimConfig};
pub use sweep::{alpha_sweep, default_alpha_grid, theorem_bound, SweepRow};
pub use train::{bptt_loss, train_controller, LossGrad, StageCost, TrainConfig, TrainReport};
