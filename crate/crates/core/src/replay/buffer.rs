use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// Absorbing termination; time-limit truncation stores `false`.
    pub done: bool,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.r.is_finite()
            && self
                .s
                .iter()
                .chain(&self.a)
                .chain(&self.s_next)
                .all(|v| v.is_finite())
    }
}

/// Column-stacked transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let states = Matrix::from_rows(&items.iter().map(|t| t.s.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&items.iter().map(|t| t.a.as_slice()).collect::<Vec<_>>())?;
        let next_states =
            Matrix::from_rows(&items.iter().map(|t| t.s_next.as_slice()).collect::<Vec<_>>())?;
        Ok(Self {
            states,
            actions,
            rewards: items.iter().map(|t| t.r).collect(),
            next_states,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }
}

/// Gradient-carrying actor rows plus buffer rows that only feed the
/// batch-norm statistics. Both are `state ⊕ action`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub grad_rows: Matrix,
    pub aux_rows: Matrix,
}

/// Bounded FIFO ring of transitions with uniform, with-replacement sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    /// index of the oldest element once the ring is full
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        Self::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("agent.buffer_capacity", "must be positive"));
        }
        Ok(Self {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            head: 0,
            rng,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.is_finite() {
            return Err(Error::NonFinite("transition".into()));
        }
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// `i`-th transition counted from the oldest.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.storage.len() {
            return None;
        }
        let idx = if self.storage.len() < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        };
        self.storage.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).filter_map(move |i| self.get(i))
    }

    /// Uniform indices with replacement, in oldest-first numbering.
    pub fn sample_indices(&mut self, n: usize) -> Result<Vec<usize>> {
        let have = self.len();
        if have == 0 || have < n {
            return Err(Error::BufferTooSmall {
                have,
                need: n.max(1),
            });
        }
        Ok((0..n).map(|_| self.rng.random_range(0..have)).collect())
    }

    pub fn sample(&mut self, batch_size: usize) -> Result<Batch> {
        let idx = self.sample_indices(batch_size)?;
        let items: Vec<&Transition> = idx.iter().filter_map(|&i| self.get(i)).collect();
        Batch::from_transitions(&items)
    }

    /// Buffer-drawn `state ⊕ action` rows.
    pub fn sample_state_actions(&mut self, n: usize) -> Result<Matrix> {
        let idx = self.sample_indices(n)?;
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .filter_map(|&i| self.get(i))
            .map(|t| t.s.iter().chain(&t.a).copied().collect())
            .collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        Matrix::from_rows(&rows)
    }
}

/// Number of auxiliary rows for `policy_rows` actor rows at mixing ratio
/// `1:x`, rounded up. `None` disables mixing.
pub fn aux_count(policy_rows: usize, ratio: Option<u32>) -> usize {
    match ratio {
        None => 0,
        Some(x) => policy_rows.div_ceil(x.max(1) as usize),
    }
}

/// Pair the actor's `(s, a')` rows with `⌈n/x⌉` buffer `(s, a)` rows used
/// only for statistics.
pub fn sample_mixed(
    buf: &mut ReplayBuffer,
    policy_states: &Matrix,
    policy_actions: &Matrix,
    ratio: Option<u32>,
) -> Result<MixedBatch> {
    if ratio == Some(0) {
        return Err(Error::config("agent.mix_ratio", "ratio must be a positive integer"));
    }
    let grad_rows = policy_states.hstack(policy_actions)?;
    let n = aux_count(grad_rows.rows(), ratio);
    let aux_rows = if n == 0 {
        Matrix::zeros(0, grad_rows.cols())
    } else {
        let aux = buf.sample_state_actions(n)?;
        if aux.cols() != grad_rows.cols() {
            return Err(Error::Shape(format!(
                "buffer rows have width {}, actor rows {}",
                aux.cols(),
                grad_rows.cols()
            )));
        }
        aux
    };
    Ok(MixedBatch {
        grad_rows,
        aux_rows,
    })
}
