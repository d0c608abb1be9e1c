use super::{check_dim, check_sample, LossOracle};
use crate::error::OracleError;
use crate::vector::{dot, ModelVector};

/// `F(x) = a^T x + c`, a single deterministic sample.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    a: Vec<f64>,
    offset: f64,
}

impl LinearLoss {
    pub fn new(a: Vec<f64>, offset: f64) -> Self {
        Self { a, offset }
    }

    pub fn slope(&self) -> &[f64] {
        &self.a
    }
}

impl LossOracle for LinearLoss {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError> {
        check_dim(self.a.len(), x)?;
        check_sample(sample, 1)?;
        Ok(dot(&self.a, x) + self.offset)
    }

    fn eval_gradient(&self, x: &[f64]) -> Option<Result<ModelVector, OracleError>> {
        Some(check_dim(self.a.len(), x).map(|_| ModelVector::from(self.a.clone())))
    }

    fn sample_gradient(&self, x: &[f64], samples: &[usize]) -> Option<Result<ModelVector, OracleError>> {
        Some(
            check_dim(self.a.len(), x)
                .and_then(|_| samples.iter().try_for_each(|&s| check_sample(s, 1)))
                .map(|_| ModelVector::from(self.a.clone())),
        )
    }
}
