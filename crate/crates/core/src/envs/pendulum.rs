//! Classic torque-limited pendulum swing-up.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment, StepEnd};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSpec {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub horizon: u32,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            horizon: 200,
        }
    }
}

/// Wrap to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

impl PendulumSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.gravity, self.mass, self.length, self.dt, self.max_torque, self.max_speed]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok || self.horizon == 0 {
            return Err(Error::config("env", "parameters must be positive"));
        }
        Ok(())
    }

    /// Semi-implicit Euler step of `θ̈ = (3g/2l)·sin θ + 3/(m l²)·u`. The
    /// reward is charged on the pre-step state.
    pub fn step(&self, theta: f64, theta_dot: f64, torque: f64) -> ((f64, f64), f64) {
        let u = torque.clamp(-self.max_torque, self.max_torque);
        let th = wrap_angle(theta);
        let cost = th * th + 0.1 * theta_dot * theta_dot + 0.001 * u * u;
        let acc = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u;
        let new_dot = (theta_dot + acc * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = wrap_angle(theta + new_dot * self.dt);
        ((new_theta, new_dot), -cost)
    }
}

pub fn pendulum_step(spec: &PendulumSpec, state: (f64, f64), torque: f64) -> EnvStep {
    let ((th, thd), reward) = spec.step(state.0, state.1, torque);
    EnvStep {
        next_state: vec![th, thd],
        reward,
        end: StepEnd::Continue,
        info: None,
    }
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    pub spec: PendulumSpec,
    theta: f64,
    theta_dot: f64,
    t: u32,
}

impl PendulumEnv {
    pub fn new(spec: PendulumSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            theta: PI,
            theta_dot: 0.0,
            t: 0,
        })
    }

    pub fn state(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }

    fn features(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for PendulumEnv {
    /// Observations are `(cos θ, sin θ, θ̇)`.
    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.spec.max_torque
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        // θ uniform in (−π, π]
        self.theta = PI - rng.random_range(0.0..2.0 * PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
        self.t = 0;
        self.features()
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let ((th, thd), reward) = self.spec.step(self.theta, self.theta_dot, action[0]);
        self.theta = th;
        self.theta_dot = thd;
        self.t += 1;
        EnvStep {
            next_state: self.features(),
            reward,
            end: if self.t >= self.spec.horizon {
                StepEnd::Truncated
            } else {
                StepEnd::Continue
            },
            info: None,
        }
    }

    fn observe(&self) -> Vec<f64> {
        self.features()
    }
}
