//! Batch and layer normalization with explicit backward passes.
//!
//! Batch normalization runs in one of three modes:
//!
//! * [`BnMode::Train`] normalizes with the batch mean and biased variance
//!   (divisor `m`) and folds them into the running estimates with momentum `λ`:
//!   `μ̂ ← (1 − λ)μ̂ + λμ`, `σ̂² ← (1 − λ)σ̂² + λσ²`.
//! * [`BnMode::Eval`] normalizes every row with the frozen running estimates.
//! * [`BnMode::StatsOnlyMixed`] computes the batch statistics over the gradient
//!   rows concatenated with auxiliary rows. Only the gradient rows are returned
//!   and only they receive input gradients.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Eval,
    StatsOnlyMixed,
}

impl BnMode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, BnMode::Eval)
    }
}

/// Learnable affine parameters plus running population estimates for one
/// batch-normalization site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma_scale: Vec<f64>,
    pub beta_shift: Vec<f64>,
    pub run_mean: Vec<f64>,
    pub run_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct BnTape {
    xhat: Matrix,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
    batch_stats: bool,
    grad_rows: usize,
}

impl BnTape {
    /// Batch mean is not stored; the normalized activations suffice for the
    /// backward pass.
    pub fn normalized(&self) -> &Matrix {
        &self.xhat
    }

    pub fn inv_std(&self) -> &[f64] {
        &self.inv_std
    }
}

#[derive(Debug, Clone)]
pub struct BnGrads {
    pub dx: Matrix,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self::with_hyper(features, DEFAULT_MOMENTUM, DEFAULT_EPSILON)
    }

    pub fn with_hyper(features: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma_scale: vec![1.0; features],
            beta_shift: vec![0.0; features],
            run_mean: vec![0.0; features],
            run_var: vec![1.0; features],
            momentum,
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma_scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.features();
        if self.beta_shift.len() != f || self.run_mean.len() != f || self.run_var.len() != f {
            return Err(Error::Shape("batch-norm vectors differ in length".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Invalid(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::Invalid(format!(
                "momentum must lie in [0, 1], got {}",
                self.momentum
            )));
        }
        if self.run_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid("negative running variance".into()));
        }
        Ok(())
    }

    /// Layer-level forward. `aux` is only consulted in
    /// [`BnMode::StatsOnlyMixed`]; `None` there means an empty auxiliary batch.
    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: BnMode,
        aux: Option<&Matrix>,
    ) -> Result<(Matrix, BnTape)> {
        match (mode, aux) {
            (BnMode::StatsOnlyMixed, Some(aux)) if aux.rows() > 0 => {
                let stacked = x.vstack(aux)?;
                let (y, tape) = self.forward_rows(&stacked, x.rows(), mode)?;
                Ok((y.slice_rows(0, x.rows()), tape))
            }
            (BnMode::StatsOnlyMixed, _) | (BnMode::Train, None) | (BnMode::Eval, None) => {
                self.forward_rows(x, x.rows(), mode)
            }
            (_, Some(_)) => Err(Error::Invalid(
                "auxiliary rows are only accepted in StatsOnlyMixed mode".into(),
            )),
        }
    }

    /// Forward over a batch whose first `grad_rows` rows carry gradient and
    /// whose remaining rows only contribute to the statistics. Returns every
    /// row of the output.
    pub(crate) fn forward_rows(
        &mut self,
        x: &Matrix,
        grad_rows: usize,
        mode: BnMode,
    ) -> Result<(Matrix, BnTape)> {
        let f = self.features();
        if x.cols() != f {
            return Err(Error::Shape(format!(
                "batch norm over {f} features fed {} columns",
                x.cols()
            )));
        }
        x.ensure_finite("batch-norm input")?;
        let (mean, var, batch_stats) = if mode.uses_batch_stats() {
            if x.rows() < 2 {
                return Err(Error::BatchTooSmall(x.rows()));
            }
            let (mean, var) = x.column_moments();
            (mean, var, true)
        } else {
            (self.run_mean.clone(), self.run_var.clone(), false)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();

        let mut xhat = Matrix::zeros(x.rows(), f);
        let mut y = Matrix::zeros(x.rows(), f);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let hr = xhat.row_mut(r);
            for j in 0..f {
                hr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let hr = xhat.row(r).to_vec();
            let yr = y.row_mut(r);
            for j in 0..f {
                yr[j] = self.gamma_scale[j] * hr[j] + self.beta_shift[j];
            }
        }

        if batch_stats {
            let lambda = self.momentum;
            for j in 0..f {
                self.run_mean[j] = (1.0 - lambda) * self.run_mean[j] + lambda * mean[j];
                self.run_var[j] = (1.0 - lambda) * self.run_var[j] + lambda * var[j];
            }
        }

        let tape = BnTape {
            xhat,
            inv_std,
            gamma: self.gamma_scale.clone(),
            batch_stats,
            grad_rows,
        };
        Ok((y, tape))
    }

    /// Normalization without a tape or a running-statistics update. Batch
    /// modes use the statistics of `x` itself.
    pub(crate) fn infer_map(&self, mut x: Matrix, mode: BnMode) -> Result<Matrix> {
        let (mean, var) = if mode.uses_batch_stats() {
            if x.rows() < 2 {
                return Err(Error::BatchTooSmall(x.rows()));
            }
            x.column_moments()
        } else {
            (self.run_mean.clone(), self.run_var.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        for r in 0..x.rows() {
            for (j, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = self.gamma_scale[j] * ((*v - mean[j]) * inv_std[j]) + self.beta_shift[j];
            }
        }
        Ok(x)
    }

    /// Layer-level backward. `dy` covers the gradient rows only; the returned
    /// `dx` likewise.
    pub fn backward(tape: BnTape, dy: &Matrix) -> Result<BnGrads> {
        let grad_rows = tape.grad_rows;
        let total = tape.xhat.rows();
        if dy.shape() != (grad_rows, tape.xhat.cols()) {
            return Err(Error::Shape(format!(
                "batch-norm backward expects {}x{} upstream gradient, got {}x{}",
                grad_rows,
                tape.xhat.cols(),
                dy.rows(),
                dy.cols()
            )));
        }
        let full = if total == grad_rows {
            dy.clone()
        } else {
            dy.vstack(&Matrix::zeros(total - grad_rows, dy.cols()))?
        };
        let mut g = Self::backward_rows(tape, &full)?;
        if total != grad_rows {
            g.dx = g.dx.slice_rows(0, grad_rows);
        }
        Ok(g)
    }

    /// Backward over every row seen by the forward pass.
    pub(crate) fn backward_rows(tape: BnTape, dy: &Matrix) -> Result<BnGrads> {
        let (m, f) = tape.xhat.shape();
        if dy.shape() != (m, f) {
            return Err(Error::Shape(format!(
                "batch-norm backward expects {m}x{f} upstream gradient, got {}x{}",
                dy.rows(),
                dy.cols()
            )));
        }
        let mut dgamma = vec![0.0; f];
        let mut dbeta = vec![0.0; f];
        for r in 0..m {
            let (dr, hr) = (dy.row(r), tape.xhat.row(r));
            for j in 0..f {
                dgamma[j] += dr[j] * hr[j];
                dbeta[j] += dr[j];
            }
        }
        let mut dx = Matrix::zeros(m, f);
        if tape.batch_stats {
            // dx = γ·inv_std/m · (m·dy − Σdy − x̂·Σ(dy·x̂))
            let inv_m = 1.0 / m as f64;
            for r in 0..m {
                let (dr, hr) = (dy.row(r), tape.xhat.row(r));
                let out = dx.row_mut(r);
                for j in 0..f {
                    out[j] = tape.gamma[j]
                        * tape.inv_std[j]
                        * (dr[j] - inv_m * dbeta[j] - hr[j] * inv_m * dgamma[j]);
                }
            }
        } else {
            for r in 0..m {
                let dr = dy.row(r);
                let out = dx.row_mut(r);
                for j in 0..f {
                    out[j] = dr[j] * tape.gamma[j] * tape.inv_std[j];
                }
            }
        }
        Ok(BnGrads { dx, dgamma, dbeta })
    }
}

/// Per-row normalization across features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma_scale: Vec<f64>,
    pub beta_shift: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct LnTape {
    xhat: Matrix,
    inv_std: Vec<f64>,
    gamma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LnGrads {
    pub dx: Matrix,
    pub dgamma: Vec<f64>,
    pub dbeta: Vec<f64>,
}

impl LayerNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma_scale: vec![1.0; features],
            beta_shift: vec![0.0; features],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma_scale.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LnTape)> {
        ln_forward(x, &self.gamma_scale, &self.beta_shift, self.epsilon)
    }
}

pub fn ln_forward(
    x: &Matrix,
    gamma_scale: &[f64],
    beta_shift: &[f64],
    epsilon: f64,
) -> Result<(Matrix, LnTape)> {
    let f = x.cols();
    if f < 2 {
        return Err(Error::Shape(format!(
            "layer norm needs at least 2 features, got {f}"
        )));
    }
    if gamma_scale.len() != f || beta_shift.len() != f {
        return Err(Error::Shape(format!(
            "layer norm over {} features fed {f} columns",
            gamma_scale.len()
        )));
    }
    x.ensure_finite("layer-norm input")?;
    let nf = f as f64;
    let mut xhat = Matrix::zeros(x.rows(), f);
    let mut y = Matrix::zeros(x.rows(), f);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / nf;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
        let is = 1.0 / (var + epsilon).sqrt();
        inv_std.push(is);
        for j in 0..f {
            let h = (xr[j] - mean) * is;
            xhat.set(r, j, h);
            y.set(r, j, gamma_scale[j] * h + beta_shift[j]);
        }
    }
    Ok((
        y,
        LnTape {
            xhat,
            inv_std,
            gamma: gamma_scale.to_vec(),
        },
    ))
}

pub fn ln_backward(tape: LnTape, dy: &Matrix) -> Result<LnGrads> {
    let (m, f) = tape.xhat.shape();
    if dy.shape() != (m, f) {
        return Err(Error::Shape("layer-norm backward shape mismatch".into()));
    }
    let nf = f as f64;
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    let mut dx = Matrix::zeros(m, f);
    let mut dxhat = vec![0.0; f];
    for r in 0..m {
        let (dr, hr) = (dy.row(r), tape.xhat.row(r));
        let mut sum = 0.0;
        let mut sum_h = 0.0;
        for j in 0..f {
            dgamma[j] += dr[j] * hr[j];
            dbeta[j] += dr[j];
            dxhat[j] = dr[j] * tape.gamma[j];
            sum += dxhat[j];
            sum_h += dxhat[j] * hr[j];
        }
        let is = tape.inv_std[r];
        let out = dx.row_mut(r);
        for j in 0..f {
            out[j] = is * (dxhat[j] - sum / nf - hr[j] * sum_h / nf);
        }
    }
    Ok(LnGrads { dx, dgamma, dbeta })
}
