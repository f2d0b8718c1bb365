//! Dense networks with explicit forward/backward passes, mode-aware batch
//! normalization, a layer-norm baseline and SGD/Adam.

pub mod gradcheck;
mod matrix;
mod net;
mod norm;
mod optim;

pub use gradcheck::{grad_check, Differentiable};
pub use matrix::Matrix;
pub use net::{
    Activation, Dense, DenseNet, GradTape, LayerGrads, NetGrads, NetSpec, Norm, NormKind,
    NormPlacement,
};
pub use norm::{
    ln_backward, ln_forward, BatchNorm, BnGrads, BnMode, BnTape, LayerNorm, LnGrads, LnTape,
    DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use optim::{Optimizer, OptimizerKind};
