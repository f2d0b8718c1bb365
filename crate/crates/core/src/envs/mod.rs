//! Verification environments.

pub mod lqr;
pub mod maze;
pub mod pendulum;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use lqr::{lqr_optimal_gain, lqr_optimal_q, lqr_solve, lqr_step, LqrEnv, LqrSolution, LqrSpec};
pub use maze::{coverage, maze_reset, maze_step, Coverage, MazeEnv, MazeSpec, Rect};
pub use pendulum::{pendulum_step, PendulumEnv, PendulumSpec};

/// How an episode continues after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEnd {
    Continue,
    /// Time limit reached; the next state still bootstraps.
    Truncated,
    /// Absorbing state; the target is masked.
    Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub end: StepEnd,
    pub info: Option<&'static str>,
}

impl EnvStep {
    /// Episode over, for either reason.
    pub fn done(&self) -> bool {
        self.end != StepEnd::Continue
    }

    pub fn terminal(&self) -> bool {
        self.end == StepEnd::Terminal
    }
}

pub trait Environment: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Actions live in `[-bound, bound]` per coordinate.
    fn action_bound(&self) -> f64;
    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> EnvStep;
    fn observe(&self) -> Vec<f64>;

    /// Fraction of reachable cells visited so far, where tracked.
    fn coverage(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Lqr(LqrSpec),
    Maze(MazeSpec),
    Pendulum(PendulumSpec),
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Lqr(_) => "lqr",
            EnvSpec::Maze(_) => "maze",
            EnvSpec::Pendulum(_) => "pendulum",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Lqr(s) => s.validate(),
            EnvSpec::Maze(s) => s.validate(),
            EnvSpec::Pendulum(s) => s.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Lqr(s) => Box::new(LqrEnv::new(*s)?),
            EnvSpec::Maze(s) => Box::new(MazeEnv::new(s.clone())?),
            EnvSpec::Pendulum(s) => Box::new(PendulumEnv::new(*s)?),
        })
    }

    pub fn discount(&self) -> Option<f64> {
        match self {
            EnvSpec::Lqr(s) => Some(s.discount),
            _ => None,
        }
    }
}
