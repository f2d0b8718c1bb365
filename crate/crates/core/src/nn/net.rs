use rand::Rng;
use serde::{Deserialize, Serialize};

use super::norm::{ln_backward, BatchNorm, BnMode, BnTape, LayerNorm, LnTape};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// `scale · tanh(z)`, bounding outputs to `[-scale, scale]`.
    ScaledTanh(f64),
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::ScaledTanh(s) => s * z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::ScaledTanh(s) => {
                let t = y / s;
                s * (1.0 - t * t)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    None,
    Batch(BatchNorm),
    Layer(LayerNorm),
}

/// Where a layer's normalization sits relative to its linear map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormPlacement {
    #[default]
    AfterLinear,
    BeforeLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NormKind {
    #[default]
    None,
    Batch,
    Layer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs × outputs`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub norm: Norm,
    pub placement: NormPlacement,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    fn norm_width(&self) -> usize {
        match self.placement {
            NormPlacement::AfterLinear => self.outputs(),
            NormPlacement::BeforeLinear => self.inputs(),
        }
    }
}

/// Fixed sequence of dense layers with optional normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

/// Shape of a [`DenseNet`]: hidden layers get the normalization and
/// activation, the output layer only its own activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub norm: NormKind,
    pub placement: NormPlacement,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

enum NormTape {
    None,
    Batch(BnTape),
    Layer(LnTape),
}

struct LayerTape {
    /// input to the linear map
    linear_in: Matrix,
    /// pre-activation and activation output
    z: Matrix,
    y: Matrix,
    norm: NormTape,
}

/// Forward intermediates for exactly one [`DenseNet::forward`] call.
/// Consumed by [`DenseNet::backward`].
pub struct GradTape {
    layers: Vec<LayerTape>,
    grad_rows: usize,
    total_rows: usize,
    out_cols: usize,
}

impl GradTape {
    pub fn grad_rows(&self) -> usize {
        self.grad_rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub gamma_scale: Vec<f64>,
    pub beta_shift: Vec<f64>,
}

/// Parameter gradients in the same order as [`DenseNet::params_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            if !l.gamma_scale.is_empty() {
                out.push(l.gamma_scale.as_slice());
                out.push(l.beta_shift.as_slice());
            }
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight
                .data_mut()
                .iter_mut()
                .zip(b.weight.data())
                .for_each(|(x, y)| *x += y);
            for (xs, ys) in [
                (&mut a.bias, &b.bias),
                (&mut a.gamma_scale, &b.gamma_scale),
                (&mut a.beta_shift, &b.beta_shift),
            ] {
                xs.iter_mut().zip(ys).for_each(|(x, y)| *x += y);
            }
        }
    }
}

impl DenseNet {
    /// Weights `U(±1/√fan_in)`, zero biases, identity normalization.
    pub fn new<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self> {
        if spec.input == 0 || spec.output == 0 || spec.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Invalid("network widths must be positive".into()));
        }
        let mut widths = vec![spec.input];
        widths.extend(&spec.hidden);
        widths.push(spec.output);
        let n = widths.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Matrix::from_vec(
                fan_in,
                fan_out,
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            )?;
            let hidden = i + 1 < n;
            let width = match spec.placement {
                NormPlacement::AfterLinear => fan_out,
                NormPlacement::BeforeLinear => fan_in,
            };
            let norm = match (hidden, spec.norm) {
                (false, _) | (_, NormKind::None) => Norm::None,
                (true, NormKind::Batch) => {
                    Norm::Batch(BatchNorm::with_hyper(width, spec.bn_momentum, spec.bn_epsilon))
                }
                (true, NormKind::Layer) => {
                    let mut ln = LayerNorm::new(width);
                    ln.epsilon = spec.bn_epsilon;
                    Norm::Layer(ln)
                }
            };
            layers.push(Dense {
                weight,
                bias: vec![0.0; fan_out],
                norm,
                placement: spec.placement,
                activation: if hidden {
                    spec.hidden_activation
                } else {
                    spec.output_activation
                },
            });
        }
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invalid("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
            let want = l.norm_width();
            match &l.norm {
                Norm::Batch(b) => {
                    b.validate()?;
                    if b.features() != want {
                        return Err(Error::Shape("batch-norm width mismatch".into()));
                    }
                }
                Norm::Layer(n) if n.features() != want => {
                    return Err(Error::Shape("layer-norm width mismatch".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l.norm, Norm::Batch(_)))
    }

    /// Forward pass with `mode` applied to every batch-norm site.
    ///
    /// In [`BnMode::StatsOnlyMixed`], `aux` rows travel through every layer
    /// alongside `x` so each batch-norm site sees the mixed statistics; only
    /// the `x` rows are returned and only they receive gradient.
    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: BnMode,
        aux: Option<&Matrix>,
    ) -> Result<(Matrix, GradTape)> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                x.cols()
            )));
        }
        let grad_rows = x.rows();
        let mut h = match (mode, aux) {
            (BnMode::StatsOnlyMixed, Some(a)) => x.vstack(a)?,
            (_, Some(_)) => {
                return Err(Error::Invalid(
                    "auxiliary rows are only accepted in StatsOnlyMixed mode".into(),
                ))
            }
            (_, None) => x.clone(),
        };
        let total_rows = h.rows();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let mut norm_tape = NormTape::None;
            let mut run_norm = |input: &Matrix, norm: &mut Norm| -> Result<Matrix> {
                match norm {
                    Norm::None => Ok(input.clone()),
                    Norm::Batch(b) => {
                        let (y, t) = b.forward_rows(input, grad_rows, mode)?;
                        norm_tape = NormTape::Batch(t);
                        Ok(y)
                    }
                    Norm::Layer(n) => {
                        let (y, t) = n.forward(input)?;
                        norm_tape = NormTape::Layer(t);
                        Ok(y)
                    }
                }
            };
            let (linear_in, z) = match layer.placement {
                NormPlacement::AfterLinear => {
                    let lin = affine(&h, &layer.weight, &layer.bias)?;
                    let z = run_norm(&lin, &mut layer.norm)?;
                    (h, z)
                }
                NormPlacement::BeforeLinear => {
                    let normed = run_norm(&h, &mut layer.norm)?;
                    let z = affine(&normed, &layer.weight, &layer.bias)?;
                    (normed, z)
                }
            };
            let act = layer.activation;
            let y = z.map(|v| act.apply(v));
            h = y.clone();
            tapes.push(LayerTape {
                linear_in,
                z,
                y,
                norm: norm_tape,
            });
        }
        let out = if total_rows == grad_rows {
            h
        } else {
            h.slice_rows(0, grad_rows)
        };
        let out_cols = out.cols();
        Ok((
            out,
            GradTape {
                layers: tapes,
                grad_rows,
                total_rows,
                out_cols,
            },
        ))
    }

    /// Backward pass. Returns the input gradient for the gradient rows and,
    /// when `with_params` is set, the parameter gradients.
    pub fn backward(
        &self,
        tape: GradTape,
        dy: &Matrix,
        with_params: bool,
    ) -> Result<(Matrix, Option<NetGrads>)> {
        if dy.shape() != (tape.grad_rows, tape.out_cols) || tape.layers.len() != self.layers.len()
        {
            return Err(Error::Shape(format!(
                "backward expects a {}x{} upstream gradient, got {}x{}",
                tape.grad_rows,
                tape.out_cols,
                dy.rows(),
                dy.cols()
            )));
        }
        let mut g = if tape.total_rows == tape.grad_rows {
            dy.clone()
        } else {
            dy.vstack(&Matrix::zeros(tape.total_rows - tape.grad_rows, dy.cols()))?
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for (layer, lt) in self.layers.iter().zip(tape.layers).rev() {
            let act = layer.activation;
            let mut dz = g;
            for ((d, &z), &y) in dz.data_mut().iter_mut().zip(lt.z.data()).zip(lt.y.data()) {
                *d *= act.derivative(z, y);
            }
            let (d_in, lg) = match layer.placement {
                NormPlacement::AfterLinear => {
                    let (dlin, dgamma, dbeta) = norm_backward(lt.norm, dz)?;
                    let (dw, db) = if with_params {
                        (lt.linear_in.t_matmul(&dlin)?, column_sums(&dlin))
                    } else {
                        (Matrix::zeros(0, 0), Vec::new())
                    };
                    (dlin.matmul_t(&layer.weight)?, (dw, db, dgamma, dbeta))
                }
                NormPlacement::BeforeLinear => {
                    let (dw, db) = if with_params {
                        (lt.linear_in.t_matmul(&dz)?, column_sums(&dz))
                    } else {
                        (Matrix::zeros(0, 0), Vec::new())
                    };
                    let dnormed = dz.matmul_t(&layer.weight)?;
                    let (din, dgamma, dbeta) = norm_backward(lt.norm, dnormed)?;
                    (din, (dw, db, dgamma, dbeta))
                }
            };
            if with_params {
                grads.push(LayerGrads {
                    weight: lg.0,
                    bias: lg.1,
                    gamma_scale: lg.2,
                    beta_shift: lg.3,
                });
            }
            g = d_in;
        }
        let dx = if tape.total_rows == tape.grad_rows {
            g
        } else {
            g.slice_rows(0, tape.grad_rows)
        };
        let grads = with_params.then(|| {
            grads.reverse();
            NetGrads { layers: grads }
        });
        Ok((dx, grads))
    }

    /// Mutable views of every learnable parameter: per layer the weights,
    /// bias, and (if normalized) scale and shift.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.data_mut());
            out.push(l.bias.as_mut_slice());
            match &mut l.norm {
                Norm::None => {}
                Norm::Batch(b) => {
                    out.push(b.gamma_scale.as_mut_slice());
                    out.push(b.beta_shift.as_mut_slice());
                }
                Norm::Layer(n) => {
                    out.push(n.gamma_scale.as_mut_slice());
                    out.push(n.beta_shift.as_mut_slice());
                }
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.weight.data());
            out.push(l.bias.as_slice());
            match &l.norm {
                Norm::None => {}
                Norm::Batch(b) => {
                    out.push(b.gamma_scale.as_slice());
                    out.push(b.beta_shift.as_slice());
                }
                Norm::Layer(n) => {
                    out.push(n.gamma_scale.as_slice());
                    out.push(n.beta_shift.as_slice());
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|s| s.len()).sum()
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm> {
        self.layers.iter().filter_map(|l| match &l.norm {
            Norm::Batch(b) => Some(b),
            _ => None,
        })
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm> {
        self.layers.iter_mut().filter_map(|l| match &mut l.norm {
            Norm::Batch(b) => Some(b),
            _ => None,
        })
    }

    /// Same layer sequence, widths and normalization kinds.
    pub fn same_structure(&self, other: &DenseNet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape()
                    && a.placement == b.placement
                    && a.activation == b.activation
                    && std::mem::discriminant(&a.norm) == std::mem::discriminant(&b.norm)
            })
    }

    /// Forward that leaves `self` untouched whatever the mode. Batch modes
    /// normalize with the statistics of `x`; StatsOnlyMixed without
    /// auxiliary rows is the same as Train.
    pub fn predict(&self, x: &Matrix, mode: BnMode) -> Result<Matrix> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                x.cols()
            )));
        }
        let norm = |h: Matrix, n: &Norm| -> Result<Matrix> {
            match n {
                Norm::None => Ok(h),
                Norm::Batch(b) => b.infer_map(h, mode),
                Norm::Layer(l) => l.forward(&h).map(|(y, _)| y),
            }
        };
        let mut h = x.clone();
        for layer in &self.layers {
            let z = match layer.placement {
                NormPlacement::AfterLinear => {
                    norm(affine(&h, &layer.weight, &layer.bias)?, &layer.norm)?
                }
                NormPlacement::BeforeLinear => {
                    affine(&norm(h, &layer.norm)?, &layer.weight, &layer.bias)?
                }
            };
            let act = layer.activation;
            h = z.map(|v| act.apply(v));
        }
        h.ensure_finite("network output")?;
        Ok(h)
    }
}

fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    for r in 0..out.rows() {
        for (v, bias) in out.row_mut(r).iter_mut().zip(b) {
            *v += bias;
        }
    }
    Ok(out)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn norm_backward(tape: NormTape, dy: Matrix) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    Ok(match tape {
        NormTape::None => (dy, Vec::new(), Vec::new()),
        NormTape::Batch(t) => {
            let g = BatchNorm::backward_rows(t, &dy)?;
            (g.dx, g.dgamma, g.dbeta)
        }
        NormTape::Layer(t) => {
            let g = ln_backward(t, &dy)?;
            (g.dx, g.dgamma, g.dbeta)
        }
    })
}
