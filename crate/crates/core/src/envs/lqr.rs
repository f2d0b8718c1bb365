//! Scalar discrete-time linear-quadratic regulator with a closed-form
//! optimal value and Q-function.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment, StepEnd};
use crate::error::{Error, Result};

/// `s' = A·s + B·a`, cost `Qc·s² + Rc·a²`, discount `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrSpec {
    pub a: f64,
    pub b: f64,
    pub qc: f64,
    pub rc: f64,
    pub discount: f64,
    pub horizon: u32,
    pub action_bound: f64,
    /// Initial states are uniform in `[-init_bound, init_bound]`.
    pub init_bound: f64,
    /// Episodes are truncated once `|s|` exceeds this.
    pub state_bound: Option<f64>,
}

fn default_horizon() -> u32 {
    200
}
fn default_action_bound() -> f64 {
    2.0
}
fn default_init_bound() -> f64 {
    1.0
}

impl Default for LqrSpec {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 1.0,
            qc: 1.0,
            rc: 1.0,
            discount: 0.99,
            horizon: default_horizon(),
            action_bound: default_action_bound(),
            init_bound: default_init_bound(),
            state_bound: None,
        }
    }
}

/// Value coefficient `P` and the optimal-Q coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrSolution {
    pub p: f64,
    pub q_s: f64,
    pub r_a: f64,
    pub cross: f64,
    /// Riccati coefficients `(a, b, c)` of `aP² + bP + c = 0`.
    pub coefficients: (f64, f64, f64),
}

impl LqrSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.qc, self.rc, self.discount, self.action_bound]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("env", "non-finite coefficient"));
        }
        if !(self.qc > 0.0) {
            return Err(Error::config("env.qc", "state cost weight must be > 0"));
        }
        if !(self.rc > 0.0) {
            return Err(Error::config("env.rc", "action cost weight must be > 0"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::config("env.discount", "discount must lie in [0, 1)"));
        }
        if self.horizon == 0 {
            return Err(Error::config("env.horizon", "horizon must be positive"));
        }
        if !(self.action_bound > 0.0) || !(self.init_bound >= 0.0) {
            return Err(Error::config("env", "bounds must be positive"));
        }
        if let Some(b) = self.state_bound {
            if !(b > self.init_bound) {
                return Err(Error::config("env.state_bound", "must exceed init_bound"));
            }
        }
        Ok(())
    }

    pub fn riccati_coefficients(&self) -> (f64, f64, f64) {
        let g = self.discount;
        let a = g * self.b * self.b;
        let b = self.rc * (1.0 - g * self.a * self.a) - g * self.qc * self.b * self.b;
        let c = -self.qc * self.rc;
        (a, b, c)
    }

    /// Positive root of the scalar Riccati equation and the derived Q*
    /// coefficients.
    pub fn solve(&self) -> Result<LqrSolution> {
        let (qa, qb, qc) = self.riccati_coefficients();
        let p = if qa == 0.0 {
            // γ = 0 or B = 0: the equation is linear, bP + c = 0.
            if qb == 0.0 {
                return Err(Error::Invalid("degenerate Riccati equation".into()));
            }
            -qc / qb
        } else {
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return Err(Error::Invalid(format!("negative Riccati discriminant {disc}")));
            }
            let root = disc.sqrt();
            // Same root as (−b + √disc)/2a, written to avoid cancellation when b > 0.
            if qb <= 0.0 {
                (-qb + root) / (2.0 * qa)
            } else {
                (2.0 * -qc) / (qb + root)
            }
        };
        let g = self.discount;
        Ok(LqrSolution {
            p,
            q_s: self.qc + g * self.a * self.a * p,
            r_a: self.rc + g * self.b * self.b * p,
            cross: g * self.a * self.b * p,
            coefficients: (qa, qb, qc),
        })
    }

    pub fn step(&self, s: f64, a: f64) -> (f64, f64) {
        let a = a.clamp(-self.action_bound, self.action_bound);
        let next = self.a * s + self.b * a;
        (next, -(self.qc * s * s + self.rc * a * a))
    }

    /// Discounted and undiscounted return of the linear policy `a = k·s`
    /// from `s0` over the horizon, with the action clipped as in the
    /// environment.
    pub fn linear_policy_return(&self, gain: f64, s0: f64) -> (f64, f64) {
        let mut s = s0;
        let mut disc = 0.0;
        let mut plain = 0.0;
        let mut w = 1.0;
        for _ in 0..self.horizon {
            let (next, r) = self.step(s, gain * s);
            disc += w * r;
            plain += r;
            w *= self.discount;
            s = next;
        }
        (disc, plain)
    }
}

impl LqrSolution {
    pub fn residual(&self) -> f64 {
        let (a, b, c) = self.coefficients;
        a * self.p * self.p + b * self.p + c
    }

    /// `Q*(s, a) = −(q_s·s² + r_a·a² + 2·cross·s·a)`.
    pub fn optimal_q(&self, s: f64, a: f64) -> f64 {
        -(self.q_s * s * s + self.r_a * a * a + 2.0 * self.cross * s * a)
    }

    /// `k*` with `a* = k*·s` maximizing `Q*(s, ·)`.
    pub fn optimal_gain(&self) -> f64 {
        -self.cross / self.r_a
    }

    pub fn value(&self, s: f64) -> f64 {
        -self.p * s * s
    }
}

pub fn lqr_solve(spec: &LqrSpec) -> Result<LqrSolution> {
    spec.validate()?;
    spec.solve()
}

pub fn lqr_optimal_q(sol: &LqrSolution, s: f64, a: f64) -> f64 {
    sol.optimal_q(s, a)
}

pub fn lqr_optimal_gain(sol: &LqrSolution) -> f64 {
    sol.optimal_gain()
}

/// Episodic LQR environment truncated at the spec horizon.
#[derive(Debug, Clone)]
pub struct LqrEnv {
    pub spec: LqrSpec,
    state: f64,
    t: u32,
}

impl LqrEnv {
    pub fn new(spec: LqrSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: 0.0,
            t: 0,
        })
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn set_state(&mut self, s: f64) {
        self.state = s;
        self.t = 0;
    }
}

pub fn lqr_step(spec: &LqrSpec, s: f64, a: f64) -> EnvStep {
    let (next, reward) = spec.step(s, a);
    EnvStep {
        next_state: vec![next],
        reward,
        end: StepEnd::Continue,
        info: None,
    }
}

impl Environment for LqrEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn action_bound(&self) -> f64 {
        self.spec.action_bound
    }

    fn reset(&mut self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        let b = self.spec.init_bound;
        self.state = if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
        self.t = 0;
        vec![self.state]
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let mut out = lqr_step(&self.spec, self.state, action[0]);
        self.state = out.next_state[0];
        self.t += 1;
        let escaped = self.spec.state_bound.is_some_and(|b| self.state.abs() > b);
        if self.t >= self.spec.horizon || escaped {
            out.end = StepEnd::Truncated;
        }
        out
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.state]
    }
}
