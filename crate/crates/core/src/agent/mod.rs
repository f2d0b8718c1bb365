//! Twin-critic deterministic actor-critic with per-call-site batch-norm modes.

mod checkpoint;
mod ddpg;
mod modes;
mod noise;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use ddpg::{q_bias_with, ActorStep, AgentConfig, AgentState, QBiasReport, Rollout};
pub use modes::{parse_mode_label, parse_mode_string, ModeConfig, Site, TargetBnStrategy};
pub use noise::{clipped_gaussian, noise_sigma, NoiseSchedule};
pub use train::{
    read_metrics_csv, stream_rng, train, write_metrics_csv, Fault, MetricsRow, RunMetrics,
    TrainSettings, CSV_COLUMNS,
};
