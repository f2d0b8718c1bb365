//! Replay buffer viewed as a uniform mixture of drifting Gaussian policies.
//!
//! Window `t` contributes actions `a ~ N(μ_t, δ_t² I)`. The mixture has mean
//! `μ_a = (1/N) Σ μ_t` and total variance
//! `σ_a² = (1/N) Σ δ_t² + (1/N) Σ ‖μ_t − μ_a‖²`, which equals the raw
//! second-moment form `(1/N) Σ δ_t² + (1/N) Σ ‖μ_t‖² − ‖μ_a‖²`. A batch mean of
//! `B` i.i.d. draws has variance `σ_a² / B` per coordinate.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPolicyParams {
    /// Per-window policy mean, `N` entries of dimension `d`.
    pub mu: Vec<Vec<f64>>,
    /// Per-window isotropic variance `δ_t² > 0`.
    pub delta2: Vec<f64>,
    pub delta_mu_bound: f64,
    pub delta_sigma_bound: f64,
    /// Actions generated per window.
    pub actions_per_step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureMoments {
    pub mu_a: Vec<f64>,
    /// Total variance from the centered form.
    pub sigma2_a: f64,
    /// Total variance from the raw second-moment form.
    pub sigma2_a_raw: f64,
    /// `(1/N) Σ δ_t²`
    pub within: f64,
    /// `(1/N) Σ ‖μ_t − μ_a‖²`
    pub between: f64,
    /// Per-coordinate mixture variance `(1/N) Σ δ_t² + (1/N) Σ (μ_tk − μ_ak)²`.
    pub coord_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseReport {
    pub max_mean_gap: f64,
    pub max_var_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchMeanReport {
    pub batch_size: usize,
    pub trials: usize,
    /// Analytic `Var(ā_k) = coord_var_k / B`.
    pub analytic_var: Vec<f64>,
    pub empirical_var: Vec<f64>,
    pub rel_deviation: Vec<f64>,
    pub analytic_mean: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    /// Standard error of each empirical mean coordinate.
    pub mean_std_error: Vec<f64>,
    /// Approximate standard error of each empirical variance.
    pub var_std_error: Vec<f64>,
}

impl BatchMeanReport {
    pub fn max_rel_deviation(&self) -> f64 {
        self.rel_deviation.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest `|empirical − analytic| / std error` over mean coordinates.
    pub fn max_mean_z(&self) -> f64 {
        self.empirical_mean
            .iter()
            .zip(&self.analytic_mean)
            .zip(&self.mean_std_error)
            .map(|((e, a), s)| if *s > 0.0 { (e - a).abs() / s } else { (e - a).abs() })
            .fold(0.0, f64::max)
    }
}

impl DriftPolicyParams {
    pub fn windows(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        self.mu.first().map(Vec::len).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mu.len();
        if n == 0 || self.delta2.len() != n {
            return Err(Error::Invalid(
                "drift parameters need matching, non-empty mean and variance sequences".into(),
            ));
        }
        let d = self.dim();
        if d == 0 || self.mu.iter().any(|m| m.len() != d) {
            return Err(Error::Invalid("policy means must share a positive dimension".into()));
        }
        if self.delta2.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Invalid("window variances must be positive".into()));
        }
        // slack for rounding in generated sequences
        let tol = 1e-12;
        for t in 0..n - 1 {
            if l2(&self.mu[t], &self.mu[t + 1]) > self.delta_mu_bound * (1.0 + tol) + tol {
                return Err(Error::Invalid(format!("mean step {t} exceeds Δ_μ")));
            }
            if (self.delta2[t] - self.delta2[t + 1]).abs()
                > self.delta_sigma_bound * (1.0 + tol) + tol
            {
                return Err(Error::Invalid(format!("variance step {t} exceeds Δ_σ")));
            }
        }
        Ok(())
    }

    /// Random admissible sequence: each step moves the mean by at most
    /// `Δ_μ` in a random direction and the variance by at most `Δ_σ`.
    pub fn random_admissible<R: Rng + ?Sized>(
        rng: &mut R,
        windows: usize,
        dim: usize,
        delta_mu_bound: f64,
        delta_sigma_bound: f64,
    ) -> Self {
        let mut mu = Vec::with_capacity(windows);
        let mut delta2 = Vec::with_capacity(windows);
        let mut m: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v: f64 = rng.random_range(0.5..2.0);
        for _ in 0..windows {
            mu.push(m.clone());
            delta2.push(v);
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let len = rng.random_range(0.0..=1.0) * delta_mu_bound;
            for (mk, dk) in m.iter_mut().zip(&dir) {
                *mk += dk / norm * len;
            }
            // reflect at a small floor so the variance stays positive
            let step = rng.random_range(-1.0..=1.0) * delta_sigma_bound;
            v = if v + step > 1e-3 { v + step } else { v - step };
        }
        Self {
            mu,
            delta2,
            delta_mu_bound,
            delta_sigma_bound,
            actions_per_step: 1,
        }
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mixture mean and variance in both algebraic forms. Fails if the forms
/// disagree by more than `1e-10` (relative to the magnitude involved).
pub fn mixture_moments(params: &DriftPolicyParams) -> Result<MixtureMoments> {
    params.validate()?;
    let n = params.windows() as f64;
    let d = params.dim();
    let mut mu_a = vec![0.0; d];
    for m in &params.mu {
        for (acc, v) in mu_a.iter_mut().zip(m) {
            *acc += v;
        }
    }
    mu_a.iter_mut().for_each(|v| *v /= n);
    let within = params.delta2.iter().sum::<f64>() / n;
    let mut coord_spread = vec![0.0; d];
    let mut raw_sq = 0.0;
    for m in &params.mu {
        for k in 0..d {
            let c = m[k] - mu_a[k];
            coord_spread[k] += c * c;
            raw_sq += m[k] * m[k];
        }
    }
    let between = coord_spread.iter().sum::<f64>() / n;
    let norm_mu_a = mu_a.iter().map(|v| v * v).sum::<f64>();
    let sigma2_a = within + between;
    let sigma2_a_raw = within + raw_sq / n - norm_mu_a;
    let scale = 1.0f64.max(within + raw_sq / n);
    if (sigma2_a - sigma2_a_raw).abs() > 1e-10 * scale {
        return Err(Error::Invalid(format!(
            "variance forms disagree: {sigma2_a} vs {sigma2_a_raw}"
        )));
    }
    Ok(MixtureMoments {
        coord_var: coord_spread.iter().map(|s| within + s / n).collect(),
        mu_a,
        sigma2_a,
        sigma2_a_raw,
        within,
        between,
    })
}

/// Largest pairwise mean distance and variance gap against
/// `N · max(Δ_μ, Δ_σ)`.
pub fn pairwise_bound_check(params: &DriftPolicyParams) -> Result<PairwiseReport> {
    params.validate()?;
    let n = params.windows();
    let mut max_mean_gap: f64 = 0.0;
    let mut max_var_gap: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            max_mean_gap = max_mean_gap.max(l2(&params.mu[i], &params.mu[j]));
            max_var_gap = max_var_gap.max((params.delta2[i] - params.delta2[j]).abs());
        }
    }
    let bound = n as f64 * params.delta_mu_bound.max(params.delta_sigma_bound);
    Ok(PairwiseReport {
        max_mean_gap,
        max_var_gap,
        bound,
        holds: max_mean_gap <= bound && max_var_gap <= bound,
    })
}

/// Draw one action from the mixture.
pub fn sample_mixture<R: Rng + ?Sized>(params: &DriftPolicyParams, rng: &mut R, out: &mut [f64]) {
    let t = rng.random_range(0..params.windows());
    let sd = params.delta2[t].sqrt();
    for (o, m) in out.iter_mut().zip(&params.mu[t]) {
        *o = m + sd * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Monte-Carlo check of `E[ā] = μ_a` and `Var(ā) = σ_a²/B` with one rng
/// stream per trial split from `seed`.
pub fn batch_mean_variance_law(
    params: &DriftPolicyParams,
    batch_size: usize,
    trials: usize,
    seed: u64,
    exec: Exec,
) -> Result<BatchMeanReport> {
    if batch_size == 0 || trials < 2 {
        return Err(Error::Invalid("need batch_size ≥ 1 and at least 2 trials".into()));
    }
    let moments = mixture_moments(params)?;
    let d = params.dim();
    let means: Vec<Vec<f64>> = map_indexed(exec, trials, |trial| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let mut acc = vec![0.0; d];
        let mut draw = vec![0.0; d];
        for _ in 0..batch_size {
            sample_mixture(params, &mut rng, &mut draw);
            acc.iter_mut().zip(&draw).for_each(|(a, x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a /= batch_size as f64);
        acc
    });
    let nt = trials as f64;
    let mut empirical_mean = vec![0.0; d];
    for m in &means {
        empirical_mean.iter_mut().zip(m).for_each(|(a, x)| *a += x);
    }
    empirical_mean.iter_mut().for_each(|a| *a /= nt);
    let mut empirical_var = vec![0.0; d];
    let mut fourth = vec![0.0; d];
    for m in &means {
        for k in 0..d {
            let c = m[k] - empirical_mean[k];
            empirical_var[k] += c * c;
            fourth[k] += c * c * c * c;
        }
    }
    // unbiased sample variance of the batch means
    empirical_var.iter_mut().for_each(|v| *v /= nt - 1.0);
    let var_std_error: Vec<f64> = (0..d)
        .map(|k| {
            let m4 = fourth[k] / nt;
            let s2 = empirical_var[k];
            ((m4 - s2 * s2 * (nt - 3.0) / (nt - 1.0)) / nt).max(0.0).sqrt()
        })
        .collect();
    let analytic_var: Vec<f64> = moments
        .coord_var
        .iter()
        .map(|v| v / batch_size as f64)
        .collect();
    let rel_deviation = empirical_var
        .iter()
        .zip(&analytic_var)
        .map(|(e, a)| (e - a).abs() / a)
        .collect();
    Ok(BatchMeanReport {
        batch_size,
        trials,
        mean_std_error: empirical_var.iter().map(|v| (v / nt).sqrt()).collect(),
        analytic_var,
        empirical_var,
        rel_deviation,
        analytic_mean: moments.mu_a,
        empirical_mean,
        var_std_error,
    })
}

/// One row of a drift-simulation CSV report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftRow {
    pub trial: String,
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
}

impl BatchMeanReport {
    pub fn rows(&self) -> Vec<DriftRow> {
        let mut out = Vec::new();
        for k in 0..self.analytic_var.len() {
            out.push(DriftRow {
                trial: format!("mean_B{}_c{k}", self.batch_size),
                analytic: self.analytic_mean[k],
                empirical: self.empirical_mean[k],
                std_error: self.mean_std_error[k],
            });
            out.push(DriftRow {
                trial: format!("var_B{}_c{k}", self.batch_size),
                analytic: self.analytic_var[k],
                empirical: self.empirical_var[k],
                std_error: self.var_std_error[k],
            });
        }
        out
    }
}

pub fn write_drift_csv(path: &Path, rows: &[DriftRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn drift_csv_string(rows: &[DriftRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let mut bytes = w
        .into_inner()
        .map_err(|e| Error::Invalid(format!("csv buffer: {e}")))?;
    bytes.flush().ok();
    String::from_utf8(bytes).map_err(|e| Error::Invalid(e.to_string()))
}
