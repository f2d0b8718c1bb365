//! Mode-aware batch normalization for off-policy actor-critic learning.
//!
//! * [`nn`] dense networks with a batch-norm layer that runs in train, eval,
//!   or stats-only-mixed mode.
//! * [`envs`] scalar LQR with a closed-form optimal critic, a continuous maze
//!   with coverage tracking, and pendulum swing-up.
//! * [`replay`] replay buffer, buffer-mixed sampling, drifting-policy mixture
//!   moments and action-distribution mismatch metrics.
//! * [`agent`] twin-critic deterministic actor-critic with a per-call-site
//!   batch-norm mode configuration.
//! * [`harness`] experiment configs, runs, sweeps, aggregation, plots and the
//!   verification suites.

pub mod agent;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod parallel;
pub mod replay;

pub use error::{Error, Result};
