use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exploration schedule `σ(t) = σ_init + (1 − min(t/T, 1))(σ_final − σ_init)`
/// and the noise clip `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSchedule {
    pub sigma_init: f64,
    pub sigma_final: f64,
    /// `T`; `None` means half the run length.
    pub decay_steps: Option<u64>,
    pub clip: f64,
    /// Run the schedule from `σ_init` down to `σ_final` instead.
    pub reversed: bool,
    /// Clipped noise on the actor-loss actions.
    pub actor_loss_noise: bool,
    /// Clipped noise on the target actions.
    pub target_noise: bool,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            sigma_init: 1.0,
            sigma_final: 0.1,
            decay_steps: None,
            clip: 0.3,
            reversed: false,
            actor_loss_noise: true,
            target_noise: true,
        }
    }
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_init >= 0.0) || !(self.sigma_final >= 0.0) {
            return Err(Error::config("agent.noise", "standard deviations must be ≥ 0"));
        }
        if !(self.clip > 0.0) || !self.clip.is_finite() {
            return Err(Error::config("agent.noise.clip", "clip must be > 0"));
        }
        Ok(())
    }

    pub fn horizon(&self, total_steps: u64) -> u64 {
        self.decay_steps.unwrap_or(total_steps / 2)
    }
}

/// `σ(t)` with decay horizon `t_decay`; `t_decay = 0` counts as saturated.
pub fn noise_sigma(t: u64, t_decay: u64, sched: &NoiseSchedule) -> f64 {
    let frac = if t_decay == 0 {
        1.0
    } else {
        (t as f64 / t_decay as f64).min(1.0)
    };
    let (start, end) = if sched.reversed {
        (sched.sigma_final, sched.sigma_init)
    } else {
        (sched.sigma_init, sched.sigma_final)
    };
    // same line as start + (1 − frac)(end − start), exact at both ends
    frac * start + (1.0 - frac) * end
}

/// One `N(0, σ²)` draw clipped to `[-c, c]`.
pub fn clipped_gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64, clip: f64) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    (sigma * e).clamp(-clip, clip)
}
