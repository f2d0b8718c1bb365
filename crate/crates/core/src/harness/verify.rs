use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envs::LqrSpec;
use crate::error::{Error, Result};
use crate::nn::gradcheck::{BnProbe, NetProbe};
use crate::nn::{grad_check, Activation, BatchNorm, BnMode, DenseNet, Matrix, NetSpec, NormKind, NormPlacement};
use crate::parallel::Exec;
use crate::replay::{batch_mean_variance_law, mixture_moments, pairwise_bound_check, DriftPolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bn,
    Theorem1,
    Lqr,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Bn, Suite::Theorem1, Suite::Lqr, Suite::Gradients];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Bn => "bn",
            Suite::Theorem1 => "theorem1",
            Suite::Lqr => "lqr",
            Suite::Gradients => "gradients",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown suite {s:?}; expected bn, theorem1, lqr or gradients")))
    }
}

/// One line of a report: passes when `measured ≤ tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.measured <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:.3e} tolerance={:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// Run a suite. Internal errors become failing checks, never panics.
pub fn verify(suite: Suite, exec: Exec) -> Vec<Check> {
    let res = match suite {
        Suite::Bn => bn_suite(),
        Suite::Theorem1 => theorem1_suite(exec),
        Suite::Lqr => lqr_suite(),
        Suite::Gradients => gradients_suite(),
    };
    res.unwrap_or_else(|e| vec![Check::new(format!("{}.error: {e}", suite.name()), f64::INFINITY, 0.0)])
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("sizes match")
}

fn random_bn(rng: &mut ChaCha8Rng, f: usize) -> BatchNorm {
    let mut b = BatchNorm::new(f);
    for j in 0..f {
        b.gamma_scale[j] = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        b.beta_shift[j] = rng.random_range(-1.0..1.0);
        b.run_mean[j] = rng.random_range(-1.0..1.0);
        b.run_var[j] = rng.random_range(0.2..3.0);
    }
    b
}

/// Direct two-pass normalization with the given statistics.
fn reference_bn(b: &BatchNorm, x: &Matrix, stats: Option<(&[f64], &[f64])>) -> Matrix {
    let (m, f) = x.shape();
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    match stats {
        Some((mu, v)) => {
            mean.copy_from_slice(mu);
            var.copy_from_slice(v);
        }
        None => {
            for j in 0..f {
                mean[j] = (0..m).map(|r| x.get(r, j)).sum::<f64>() / m as f64;
                var[j] = (0..m).map(|r| (x.get(r, j) - mean[j]).powi(2)).sum::<f64>() / m as f64;
            }
        }
    }
    let mut y = Matrix::zeros(m, f);
    for r in 0..m {
        for j in 0..f {
            y.row_mut(r)[j] =
                b.gamma_scale[j] * (x.get(r, j) - mean[j]) / (var[j] + b.epsilon).sqrt() + b.beta_shift[j];
        }
    }
    y
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn bn_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b0);
    let mut train_err: f64 = 0.0;
    let mut eval_err: f64 = 0.0;
    let mut grad_err: f64 = 0.0;
    let mut col_sum: f64 = 0.0;
    for i in 0..100 {
        let m = rng.random_range(3..10);
        let f = rng.random_range(1..5);
        let b = random_bn(&mut rng, f);
        let x = random_matrix(&mut rng, m, f, 2.0);

        let mut t = b.clone();
        let (y, _) = t.forward(&x, BnMode::Train, None)?;
        train_err = train_err.max(max_abs_diff(&y, &reference_bn(&b, &x, None)));
        let mut e = b.clone();
        let (y, _) = e.forward(&x, BnMode::Eval, None)?;
        eval_err = eval_err.max(max_abs_diff(&y, &reference_bn(&b, &x, Some((&b.run_mean, &b.run_var)))));

        let mode = [BnMode::Train, BnMode::Eval, BnMode::StatsOnlyMixed][i % 3];
        let aux = (mode == BnMode::StatsOnlyMixed).then(|| random_matrix(&mut rng, 4, f, 2.0));
        let weights = random_matrix(&mut rng, m, f, 1.0);
        let mut probe = BnProbe {
            layer: b.clone(),
            mode,
            aux,
            weights: weights.clone(),
        };
        grad_err = grad_err.max(grad_check(&mut probe, &x, 1e-5)?);

        let mut t = b.clone();
        let (_, tape) = t.forward(&x, BnMode::Train, None)?;
        let g = BatchNorm::backward(tape, &weights)?;
        for j in 0..f {
            col_sum = col_sum.max((0..m).map(|r| g.dx.get(r, j)).sum::<f64>().abs());
        }
    }

    // stationary stream: |running − batch| shrinks by (1 − λ) per update
    let mut b = BatchNorm::new(3);
    let x = random_matrix(&mut rng, 16, 3, 3.0);
    let (mean, var) = x.column_moments();
    let gap0 = (0..3)
        .map(|j| (b.run_mean[j] - mean[j]).abs().max((b.run_var[j] - var[j]).abs()))
        .fold(0.0, f64::max);
    let predicted = ((1e-8 / gap0).ln() / (1.0 - b.momentum).ln()).ceil() as usize;
    for _ in 0..predicted {
        b.forward(&x, BnMode::Train, None)?;
    }
    let gap = (0..3)
        .map(|j| (b.run_mean[j] - mean[j]).abs().max((b.run_var[j] - var[j]).abs()))
        .fold(0.0, f64::max);

    Ok(vec![
        Check::new("bn.train_forward_max_abs_error", train_err, 1e-10),
        Check::new("bn.eval_forward_max_abs_error", eval_err, 1e-10),
        Check::new("bn.backward_max_rel_error", grad_err, 1e-6),
        Check::new("bn.train_input_grad_column_sum", col_sum, 1e-10),
        Check::new(format!("bn.running_stats_gap_after_{predicted}_updates"), gap, 1e-8),
    ])
}

fn gradients_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let mut checks = Vec::new();
    let cases = [
        ("none", NormKind::None, BnMode::Train),
        ("layer", NormKind::Layer, BnMode::Train),
        ("batch_train", NormKind::Batch, BnMode::Train),
        ("batch_eval", NormKind::Batch, BnMode::Eval),
        ("batch_mixed", NormKind::Batch, BnMode::StatsOnlyMixed),
    ];
    for (label, norm, mode) in cases {
        let spec = NetSpec {
            input: 4,
            hidden: vec![6, 5],
            output: 2,
            norm,
            placement: NormPlacement::AfterLinear,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::ScaledTanh(2.0),
            bn_momentum: 0.1,
            bn_epsilon: 1e-5,
        };
        let mut net = DenseNet::new(&spec, &mut rng)?;
        for bn in net.batch_norms_mut() {
            *bn = random_bn(&mut rng, bn.features());
        }
        let x = random_matrix(&mut rng, 7, 4, 1.5);
        let aux = (mode == BnMode::StatsOnlyMixed).then(|| random_matrix(&mut rng, 5, 4, 1.5));
        let weights = random_matrix(&mut rng, 7, 2, 1.0);
        let mut probe = NetProbe {
            net: net.clone(),
            mode,
            aux: aux.clone(),
            weights: weights.clone(),
        };
        checks.push(Check::new(format!("gradients.{label}.input"), grad_check(&mut probe, &x, 1e-5)?, 1e-6));

        // Biases feeding a batch-statistics layer have an exact zero
        // gradient, so relative error is floored at 1e-4 here.
        let mut fwd = net.clone();
        let (_, tape) = fwd.forward(&x, mode, aux.as_ref())?;
        let (_, grads) = net.backward(tape, &weights, true)?;
        let analytic = grads.expect("requested").flatten();
        let theta: Vec<f64> = net.params().concat();
        let value = |p: &[f64]| -> Result<f64> {
            let mut n = net.clone();
            let mut k = 0;
            for s in n.params_mut() {
                let len = s.len();
                s.copy_from_slice(&p[k..k + len]);
                k += len;
            }
            let (y, _) = n.forward(&x, mode, aux.as_ref())?;
            Ok(y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
        };
        let h = 1e-5;
        let mut probe = theta.clone();
        let mut err: f64 = 0.0;
        for i in 0..theta.len() {
            probe[i] = theta[i] + h;
            let up = value(&probe)?;
            probe[i] = theta[i] - h;
            let down = value(&probe)?;
            probe[i] = theta[i];
            let numeric = (up - down) / (2.0 * h);
            err = err.max((analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-4));
        }
        checks.push(Check::new(format!("gradients.{label}.params"), err, 1e-6));
    }
    Ok(checks)
}

fn theorem1_suite(exec: Exec) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e01);
    let mut violations = 0usize;
    let mut form_gap: f64 = 0.0;
    for _ in 0..1000 {
        let windows = rng.random_range(2..30);
        let dim = rng.random_range(1..4);
        let dmu = rng.random_range(0.0..0.5);
        let dsig = rng.random_range(0.0..0.5);
        let p = DriftPolicyParams::random_admissible(&mut rng, windows, dim, dmu, dsig);
        if !pairwise_bound_check(&p)?.holds {
            violations += 1;
        }
        let m = mixture_moments(&p)?;
        form_gap = form_gap.max((m.sigma2_a - m.sigma2_a_raw).abs() / m.sigma2_a.abs().max(1.0));
    }
    let mut checks = vec![
        Check::new("theorem1.pairwise_bound_violations", violations as f64, 0.0),
        Check::new("theorem1.variance_forms_gap", form_gap, 1e-10),
    ];
    let params = DriftPolicyParams::random_admissible(&mut rng, 20, 2, 0.3, 0.2);
    for b in [4usize, 64, 256] {
        let r = batch_mean_variance_law(&params, b, 100_000, 0xba7c + b as u64, exec)?;
        checks.push(Check::new(format!("theorem1.mean_z_B{b}"), r.max_mean_z(), 4.0));
        checks.push(Check::new(format!("theorem1.var_rel_dev_B{b}"), r.max_rel_deviation(), 0.05));
    }
    Ok(checks)
}

fn random_lqr(rng: &mut ChaCha8Rng) -> LqrSpec {
    LqrSpec {
        a: rng.random_range(-1.5..1.5),
        b: rng.random_range(0.2..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        qc: rng.random_range(0.1..5.0),
        rc: rng.random_range(0.1..5.0),
        discount: rng.random_range(0.5..0.999),
        ..LqrSpec::default()
    }
}

/// Maximizer of a concave function on `[lo, hi]` by golden-section search.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-11 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

fn lqr_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x10a);
    let mut residual: f64 = 0.0;
    let mut bellman: f64 = 0.0;
    let mut argmax: f64 = 0.0;
    for _ in 0..1000 {
        let spec = random_lqr(&mut rng);
        let sol = spec.solve()?;
        let (qa, qb, qc) = sol.coefficients;
        residual = residual.max(sol.residual().abs() / (qa.abs() * sol.p * sol.p + qb.abs() * sol.p + qc.abs()));
        let s = rng.random_range(-3.0..3.0);
        let a = rng.random_range(-3.0..3.0);
        let next = spec.a * s + spec.b * a;
        let r = -(spec.qc * s * s + spec.rc * a * a);
        let q = sol.optimal_q(s, a);
        bellman = bellman.max((q - (r + spec.discount * sol.value(next))).abs() / q.abs().max(1.0));
        let width = 10.0 * (1.0 + s.abs());
        let a_num = golden_max(|a| sol.optimal_q(s, a), -width, width);
        argmax = argmax.max((a_num - sol.optimal_gain() * s).abs());
    }
    Ok(vec![
        Check::new("lqr.riccati_relative_residual", residual, 1e-10),
        Check::new("lqr.bellman_identity", bellman, 1e-9),
        Check::new("lqr.numeric_argmax_vs_gain", argmax, 1e-6),
    ])
}
