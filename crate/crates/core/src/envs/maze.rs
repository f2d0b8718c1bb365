//! Continuous-action 2-D maze with obstacles, a death zone and coverage
//! tracking over a `G × G` grid.

use serde::{Deserialize, Serialize};

use super::{EnvStep, Environment, StepEnd};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: [x0, y0],
            max: [x1, y1],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Whether the closed segment `from → to` touches the box (slab test).
    pub fn intersects_segment(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for k in 0..2 {
            let d = to[k] - from[k];
            if d == 0.0 {
                if from[k] < self.min[k] || from[k] > self.max[k] {
                    return false;
                }
            } else {
                let (mut lo, mut hi) = ((self.min[k] - from[k]) / d, (self.max[k] - from[k]) / d);
                if lo > hi {
                    std::mem::swap(&mut lo, &mut hi);
                }
                t0 = t0.max(lo);
                t1 = t1.min(hi);
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }

    fn is_valid(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
            && self.min[0] < self.max[0]
            && self.min[1] < self.max[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeRewards {
    pub goal: f64,
    pub death: f64,
    pub step: f64,
    pub shaping: f64,
}

impl Default for MazeRewards {
    fn default() -> Self {
        Self {
            goal: 10.0,
            death: -10.0,
            step: -0.01,
            shaping: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MazeSpec {
    pub bounds: Rect,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub obstacles: Vec<Rect>,
    pub death_zone: Rect,
    pub max_step: f64,
    pub episode_cap: u32,
    pub grid: usize,
    #[serde(default)]
    pub rewards: MazeRewards,
}

impl Default for MazeSpec {
    /// Unit square split by a vertical wall with a gap; the death zone sits
    /// just past the gap on the goal side.
    fn default() -> Self {
        Self {
            bounds: Rect::new(0.0, 0.0, 1.0, 1.0),
            start: [0.1, 0.1],
            goal: [0.9, 0.9],
            goal_radius: 0.05,
            obstacles: vec![
                Rect::new(0.45, 0.0, 0.55, 0.55),
                Rect::new(0.45, 0.75, 0.55, 1.0),
            ],
            death_zone: Rect::new(0.6, 0.76, 0.7, 0.86),
            max_step: 0.05,
            episode_cap: 300,
            grid: 20,
            rewards: MazeRewards::default(),
        }
    }
}

impl MazeSpec {
    pub fn obstacle_free(grid: usize) -> Self {
        Self {
            obstacles: Vec::new(),
            death_zone: Rect::new(2.0, 2.0, 3.0, 3.0),
            grid,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bounds.is_valid() {
            return Err(Error::config("env.bounds", "degenerate box"));
        }
        if self.grid < 2 {
            return Err(Error::config("env.grid", "grid resolution must be at least 2"));
        }
        if !(self.max_step > 0.0) || !(self.goal_radius > 0.0) || self.episode_cap == 0 {
            return Err(Error::config(
                "env.maze",
                "max_step, goal_radius and episode_cap must be positive",
            ));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() {
                return Err(Error::config(format!("env.obstacles[{i}]"), "degenerate box"));
            }
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.bounds.contains(p) {
                return Err(Error::config(format!("env.{name}"), "outside the bounds"));
            }
            if self.blocked(p) || self.death_zone.contains(p) {
                return Err(Error::config(
                    format!("env.{name}"),
                    "inside an obstacle or the death zone",
                ));
            }
        }
        Ok(())
    }

    pub fn blocked(&self, p: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    fn distance_to_goal(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.goal[0]).powi(2) + (p[1] - self.goal[1]).powi(2)).sqrt()
    }

    /// One transition from `s` under `a ∈ [-1, 1]²` (clipped first).
    pub fn transition(&self, s: [f64; 2], a: [f64; 2]) -> (EnvStepKind, [f64; 2], f64) {
        let d = [
            a[0].clamp(-1.0, 1.0) * self.max_step,
            a[1].clamp(-1.0, 1.0) * self.max_step,
        ];
        let mut next = [
            (s[0] + d[0]).clamp(self.bounds.min[0], self.bounds.max[0]),
            (s[1] + d[1]).clamp(self.bounds.min[1], self.bounds.max[1]),
        ];
        if self.obstacles.iter().any(|o| o.intersects_segment(s, next)) {
            next = s;
        }
        if self.death_zone.contains(next) {
            return (EnvStepKind::Death, next, self.rewards.death);
        }
        if self.distance_to_goal(next) <= self.goal_radius {
            return (EnvStepKind::Goal, next, self.rewards.goal);
        }
        let shaping = self.distance_to_goal(s) - self.distance_to_goal(next);
        (
            EnvStepKind::Move,
            next,
            self.rewards.step + self.rewards.shaping * shaping,
        )
    }

    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let g = self.grid;
        let idx = |k: usize| {
            let span = self.bounds.max[k] - self.bounds.min[k];
            let f = ((p[k] - self.bounds.min[k]) / span * g as f64).floor();
            (f.max(0.0) as usize).min(g - 1)
        };
        (idx(0), idx(1))
    }

    fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        let g = self.grid as f64;
        let w = (self.bounds.max[0] - self.bounds.min[0]) / g;
        let h = (self.bounds.max[1] - self.bounds.min[1]) / g;
        [
            self.bounds.min[0] + (i as f64 + 0.5) * w,
            self.bounds.min[1] + (j as f64 + 0.5) * h,
        ]
    }

    /// Cells whose center is not inside an obstacle.
    pub fn reachable_mask(&self) -> Vec<bool> {
        let g = self.grid;
        let mut out = vec![false; g * g];
        for j in 0..g {
            for i in 0..g {
                out[j * g + i] = !self.blocked(self.cell_center(i, j));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvStepKind {
    Move,
    Goal,
    Death,
}

/// Visited-cell record for coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    grid: usize,
    reachable: Vec<bool>,
    visited: Vec<bool>,
}

impl Coverage {
    pub fn new(spec: &MazeSpec) -> Self {
        let reachable = spec.reachable_mask();
        Self {
            grid: spec.grid,
            visited: vec![false; reachable.len()],
            reachable,
        }
    }

    pub fn visit_cell(&mut self, i: usize, j: usize) {
        if i < self.grid && j < self.grid {
            self.visited[j * self.grid + i] = true;
        }
    }

    pub fn visit(&mut self, spec: &MazeSpec, p: [f64; 2]) {
        let (i, j) = spec.cell_of(p);
        self.visit_cell(i, j);
    }

    pub fn reachable_cells(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }

    /// `|visited ∩ reachable| / |reachable|`.
    pub fn fraction(&self) -> f64 {
        let reachable = self.reachable_cells();
        if reachable == 0 {
            return 0.0;
        }
        let hit = self
            .visited
            .iter()
            .zip(&self.reachable)
            .filter(|(v, r)| **v && **r)
            .count();
        hit as f64 / reachable as f64
    }
}

pub fn coverage(visited: &Coverage) -> f64 {
    visited.fraction()
}

#[derive(Debug, Clone)]
pub struct MazeEnv {
    pub spec: MazeSpec,
    pos: [f64; 2],
    t: u32,
    coverage: Coverage,
}

impl MazeEnv {
    pub fn new(spec: MazeSpec) -> Result<Self> {
        spec.validate()?;
        let coverage = Coverage::new(&spec);
        Ok(Self {
            pos: spec.start,
            t: 0,
            coverage,
            spec,
        })
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    pub fn place(&mut self, p: [f64; 2]) {
        self.pos = p;
        self.t = 0;
    }

    pub fn coverage_map(&self) -> &Coverage {
        &self.coverage
    }
}

pub fn maze_step(spec: &MazeSpec, s: [f64; 2], a: [f64; 2]) -> EnvStep {
    let (kind, next, reward) = spec.transition(s, a);
    EnvStep {
        next_state: next.to_vec(),
        reward,
        end: match kind {
            EnvStepKind::Move => StepEnd::Continue,
            EnvStepKind::Goal | EnvStepKind::Death => StepEnd::Terminal,
        },
        info: match kind {
            EnvStepKind::Move => None,
            EnvStepKind::Goal => Some("goal"),
            EnvStepKind::Death => Some("death"),
        },
    }
}

pub fn maze_reset(spec: &MazeSpec) -> [f64; 2] {
    spec.start
}

impl Environment for MazeEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_bound(&self) -> f64 {
        1.0
    }

    fn reset(&mut self, _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.pos = maze_reset(&self.spec);
        self.t = 0;
        self.coverage.visit(&self.spec, self.pos);
        self.pos.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> EnvStep {
        let mut out = maze_step(&self.spec, self.pos, [action[0], action[1]]);
        self.pos = [out.next_state[0], out.next_state[1]];
        self.coverage.visit(&self.spec, self.pos);
        self.t += 1;
        if out.end == StepEnd::Continue && self.t >= self.spec.episode_cap {
            out.end = StepEnd::Truncated;
        }
        out
    }

    fn observe(&self) -> Vec<f64> {
        self.pos.to_vec()
    }

    fn coverage(&self) -> Option<f64> {
        Some(self.coverage.fraction())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        MazeSpec::default().validate().unwrap();
    }

    #[test]
    fn goal_is_terminal() {
        let spec = MazeSpec::default();
        let s = maze_step(&spec, spec.goal, [0.1, -0.1]);
        assert_eq!(s.end, StepEnd::Terminal);
        assert_eq!(s.reward, spec.rewards.goal);
    }

    #[test]
    fn null_action() {
        let spec = MazeSpec::default();
        let s = maze_step(&spec, [0.3, 0.8], [0.0, 0.0]);
        assert_eq!(s.next_state, vec![0.3, 0.8]);
        assert_eq!(s.reward, spec.rewards.step);
        assert_eq!(s.end, StepEnd::Continue);
    }

    #[test]
    fn wall_blocks() {
        let spec = MazeSpec::default();
        let s = maze_step(&spec, [0.42, 0.3], [1.0, 0.0]);
        assert_eq!(s.next_state, vec![0.42, 0.3]);
        // diagonal corner cut is blocked too
        assert!(spec.obstacles[0].intersects_segment([0.44, 0.56], [0.46, 0.54]));
    }

    #[test]
    fn death_zone_terminates() {
        let spec = MazeSpec::default();
        let s = maze_step(&spec, [0.62, 0.74], [0.0, 1.0]);
        assert_eq!(s.end, StepEnd::Terminal);
        assert_eq!(s.reward, spec.rewards.death);
        assert_eq!(s.info, Some("death"));
    }

    #[test]
    fn bad_specs_rejected() {
        let mut spec = MazeSpec::default();
        spec.start = [0.5, 0.2];
        assert!(spec.validate().is_err());
        let mut spec = MazeSpec::default();
        spec.grid = 1;
        assert!(spec.validate().is_err());
        let mut spec = MazeSpec::default();
        spec.goal = [1.5, 0.5];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn coverage_counts() {
        let spec = MazeSpec::obstacle_free(10);
        let mut c = Coverage::new(&spec);
        assert_eq!(c.fraction(), 0.0);
        c.visit(&spec, [0.05, 0.05]);
        assert!((c.fraction() - 0.01).abs() < 1e-15);
        for j in 0..10 {
            for i in 0..10 {
                c.visit_cell(i, j);
            }
        }
        assert_eq!(c.fraction(), 1.0);
    }

    #[test]
    fn obstacle_cells_excluded() {
        let spec = MazeSpec::default();
        let c = Coverage::new(&spec);
        // wall occupies columns 9 and 10 (centers 0.475, 0.525) except the gap rows 11..=14
        assert_eq!(c.reachable_cells(), 400 - 2 * (20 - 4));
    }
}
