//! Central-difference gradient checking.

use super::{BatchNorm, BnMode, DenseNet, Matrix};
use crate::error::Result;

/// A scalar function of a matrix with an analytic gradient.
pub trait Differentiable {
    fn value(&mut self, x: &Matrix) -> Result<f64>;
    fn gradient(&mut self, x: &Matrix) -> Result<Matrix>;
}

/// Largest elementwise `|a − b| / max(1e-12, |a| + |b|)` between the analytic
/// gradient and central differences with step `h`.
pub fn grad_check<F: Differentiable + ?Sized>(f: &mut F, x: &Matrix, h: f64) -> Result<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = f.gradient(x)?;
    compare_with_numeric(|p| f.value(p), x, &analytic, h)
}

/// Same as [`grad_check`] against a supplied gradient.
pub fn compare_with_numeric(
    mut value: impl FnMut(&Matrix) -> Result<f64>,
    x: &Matrix,
    analytic: &Matrix,
    h: f64,
) -> Result<f64> {
    let mut probe = x.clone();
    let mut worst: f64 = 0.0;
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = value(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = value(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12));
    }
    Ok(worst)
}

/// `⟨weights, BN(x)⟩` with the layer state reset before every evaluation so
/// running-statistic updates do not leak between probes.
pub struct BnProbe {
    pub layer: BatchNorm,
    pub mode: BnMode,
    pub aux: Option<Matrix>,
    pub weights: Matrix,
}

impl Differentiable for BnProbe {
    fn value(&mut self, x: &Matrix) -> Result<f64> {
        let mut layer = self.layer.clone();
        let (y, _) = layer.forward(x, self.mode, self.aux.as_ref())?;
        Ok(dot(&y, &self.weights))
    }

    fn gradient(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut layer = self.layer.clone();
        let (_, tape) = layer.forward(x, self.mode, self.aux.as_ref())?;
        Ok(BatchNorm::backward(tape, &self.weights)?.dx)
    }
}

/// `⟨weights, net(x)⟩` for a whole network.
pub struct NetProbe {
    pub net: DenseNet,
    pub mode: BnMode,
    pub aux: Option<Matrix>,
    pub weights: Matrix,
}

impl Differentiable for NetProbe {
    fn value(&mut self, x: &Matrix) -> Result<f64> {
        let mut net = self.net.clone();
        let (y, _) = net.forward(x, self.mode, self.aux.as_ref())?;
        Ok(dot(&y, &self.weights))
    }

    fn gradient(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut net = self.net.clone();
        let (_, tape) = net.forward(x, self.mode, self.aux.as_ref())?;
        Ok(net.backward(tape, &self.weights, false)?.0)
    }
}

pub struct Identity;

impl Differentiable for Identity {
    fn value(&mut self, x: &Matrix) -> Result<f64> {
        Ok(x.data().iter().sum())
    }

    fn gradient(&mut self, x: &Matrix) -> Result<Matrix> {
        Ok(Matrix::filled(x.rows(), x.cols(), 1.0))
    }
}

fn dot(a: &Matrix, b: &Matrix) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let x = Matrix::from_rows(&[[0.3, -1.0], [2.0, 5.5]]).unwrap();
        assert!(grad_check(&mut Identity, &x, 1e-5).unwrap() < 1e-10);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        struct Wrong;
        impl Differentiable for Wrong {
            fn value(&mut self, x: &Matrix) -> Result<f64> {
                Ok(x.data().iter().map(|v| v * v).sum())
            }
            fn gradient(&mut self, x: &Matrix) -> Result<Matrix> {
                Ok(x.clone())
            }
        }
        let x = Matrix::row_vector(&[1.0, 2.0]);
        assert!(grad_check(&mut Wrong, &x, 1e-5).unwrap() > 0.3);
    }
}
