use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// SGD or Adam over a flat parameter list. Adam moments are allocated on the
/// first step and keep the concatenated parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// Apply one update. Nothing is modified if the shapes disagree or a
    /// gradient is non-finite.
    pub fn apply(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(&grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("parameter and gradient layouts differ".into()));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let total: usize = params.iter().map(|p| p.len()).sum();
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = vec![0.0; total];
                    self.second = vec![0.0; total];
                } else if self.first.len() != total {
                    self.step -= 1;
                    return Err(Error::Shape(format!(
                        "optimizer tracks {} parameters, got {total}",
                        self.first.len()
                    )));
                }
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powf(self.step as f64);
                let c2 = 1.0 - b2.powf(self.step as f64);
                let mut k = 0;
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, &d) in p.iter_mut().zip(g) {
                        let m = &mut self.first[k];
                        let v = &mut self.second[k];
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
                        k += 1;
                    }
                }
            }
        }
        Ok(())
    }
}
