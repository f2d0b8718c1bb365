//! Replay storage and the statistics of the data it holds.

mod buffer;
pub mod drift;

pub use buffer::{aux_count, sample_mixed, Batch, MixedBatch, ReplayBuffer, Transition};
pub use drift::{
    batch_mean_variance_law, mixture_moments, pairwise_bound_check, BatchMeanReport,
    DriftPolicyParams, MixtureMoments, PairwiseReport,
};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// `(‖mean(a_c) − mean(a_b)‖₂, ‖var(a_c) − var(a_b)‖₂)` with per-coordinate
/// biased variances.
pub fn action_dist_diff(policy_batch: &Matrix, buffer_batch: &Matrix) -> Result<(f64, f64)> {
    if policy_batch.cols() != buffer_batch.cols() {
        return Err(Error::Shape(format!(
            "action dimension {} vs {}",
            policy_batch.cols(),
            buffer_batch.cols()
        )));
    }
    if policy_batch.rows() == 0 || buffer_batch.rows() == 0 {
        return Err(Error::Invalid("empty action batch".into()));
    }
    let (mc, vc) = policy_batch.column_moments();
    let (mb, vb) = buffer_batch.column_moments();
    let norm = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    Ok((norm(&mc, &mb), norm(&vc, &vb)))
}
