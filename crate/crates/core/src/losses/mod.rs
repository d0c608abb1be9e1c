//! Loss oracles.
//!
//! Training only ever calls [`LossOracle::value`]. The gradient methods exist
//! for evaluation metrics and for the first-order FedAvg baseline; the
//! [`CountingOracle`] wrapper lets tests prove the zeroth-order path never
//! touches them.

mod attack;
mod counting;
mod linear;
mod quadratic;
mod softmax;

pub use attack::{AttackImage, AttackLoss, Classifier, ConfidenceKind, LinearClassifier, PIXEL_CLAMP};
pub use counting::{CallCounts, CountingOracle};
pub use linear::LinearLoss;
pub use quadratic::QuadraticDeviceLoss;
pub use softmax::{accuracy, log_softmax, SoftmaxLoss};

use crate::error::OracleError;
use crate::vector::ModelVector;

/// Per-device loss `F_i(x, xi)`, addressed by local sample handle.
pub trait LossOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    /// `F_i(x, xi)` for local sample `sample`. Pure and deterministic.
    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError>;

    /// Mean loss over the full local sample set, `f_i(x)`.
    fn mean_value(&self, x: &[f64]) -> Result<f64, OracleError> {
        let n = self.num_samples();
        let mut total = 0.0;
        for s in 0..n {
            total += self.value(x, s)?;
        }
        Ok(total / n as f64)
    }

    /// Exact gradient of `f_i` when the loss admits one. Metrics only.
    fn eval_gradient(&self, _x: &[f64]) -> Option<Result<ModelVector, OracleError>> {
        None
    }

    /// Mean stochastic gradient over `samples`. Only the FedAvg baseline uses this.
    fn sample_gradient(&self, _x: &[f64], _samples: &[usize]) -> Option<Result<ModelVector, OracleError>> {
        None
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<(), OracleError> {
    if x.len() != expected {
        return Err(OracleError::DimensionMismatch { expected, got: x.len() });
    }
    Ok(())
}

pub(crate) fn check_sample(index: usize, len: usize) -> Result<(), OracleError> {
    if index >= len {
        return Err(OracleError::SampleOutOfRange { index, len });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testing {
    use super::LossOracle;

    /// Central finite differences of the mean local loss.
    pub fn finite_difference_gradient(oracle: &dyn LossOracle, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|j| {
                probe[j] = x[j] + h;
                let up = oracle.mean_value(&probe).unwrap();
                probe[j] = x[j] - h;
                let down = oracle.mean_value(&probe).unwrap();
                probe[j] = x[j];
                (up - down) / (2.0 * h)
            })
            .collect()
    }
}
