use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::LossOracle;
use crate::error::OracleError;
use crate::vector::ModelVector;

/// Shared call counters for a [`CountingOracle`].
#[derive(Debug, Default)]
pub struct CallCounts {
    value: AtomicU64,
    gradient: AtomicU64,
}

impl CallCounts {
    pub fn values(&self) -> u64 {
        self.value.load(Ordering::Relaxed)
    }

    /// Calls to either gradient method.
    pub fn gradients(&self) -> u64 {
        self.gradient.load(Ordering::Relaxed)
    }
}

/// Wraps an oracle and counts every value and gradient query.
pub struct CountingOracle<O: ?Sized> {
    counts: Arc<CallCounts>,
    inner: Arc<O>,
}

impl<O: LossOracle + ?Sized> CountingOracle<O> {
    pub fn new(inner: Arc<O>) -> Self {
        Self::with_counts(inner, Arc::new(CallCounts::default()))
    }

    /// Several wrappers may share one set of counters.
    pub fn with_counts(inner: Arc<O>, counts: Arc<CallCounts>) -> Self {
        Self { counts, inner }
    }

    pub fn counts(&self) -> &Arc<CallCounts> {
        &self.counts
    }
}

impl<O: LossOracle + ?Sized> LossOracle for CountingOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn num_samples(&self) -> usize {
        self.inner.num_samples()
    }

    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError> {
        self.counts.value.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x, sample)
    }

    fn mean_value(&self, x: &[f64]) -> Result<f64, OracleError> {
        self.counts
            .value
            .fetch_add(self.inner.num_samples() as u64, Ordering::Relaxed);
        self.inner.mean_value(x)
    }

    fn eval_gradient(&self, x: &[f64]) -> Option<Result<ModelVector, OracleError>> {
        self.counts.gradient.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_gradient(x)
    }

    fn sample_gradient(&self, x: &[f64], samples: &[usize]) -> Option<Result<ModelVector, OracleError>> {
        self.counts.gradient.fetch_add(1, Ordering::Relaxed);
        self.inner.sample_gradient(x, samples)
    }
}
