//! Local training on one device.

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimator::{estimate_with_draws, EstimatorDraws, EstimatorParams};
use crate::losses::LossOracle;
use crate::rng::{Purpose, SeedPath};
use crate::vector::ModelVector;

/// Outcome of `H` local steps: `delta = x^{(t,H)} - x^{(t,0)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRunResult {
    pub delta: ModelVector,
    pub delta_sq_norm: f64,
}

impl LocalRunResult {
    fn new(start: &[f64], end: &[f64]) -> Self {
        let delta = ModelVector::from(end).minus(start);
        let delta_sq_norm = delta.norm_sq();
        Self { delta, delta_sq_norm }
    }
}

/// Identifies whose randomness a local run consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub device: usize,
    pub round: usize,
}

impl StreamKey {
    pub fn new(seed: u64, device: usize, round: usize) -> Self {
        Self { seed, device, round }
    }

    fn path(&self, purpose: Purpose, step: usize) -> SeedPath {
        SeedPath::new(self.seed, purpose)
            .device(self.device)
            .round(self.round)
            .step(step)
    }
}

/// `H` zeroth-order steps `x <- x - eta * e`, starting from `x_start`.
///
/// Step `k` draws its samples and directions from streams keyed by
/// `(seed, device, round, k)`, so the result does not depend on scheduling.
pub fn local_update(
    oracle: &dyn LossOracle,
    x_start: &[f64],
    local_iters: usize,
    eta: f64,
    params: &EstimatorParams,
    key: StreamKey,
) -> Result<LocalRunResult> {
    local_update_with(oracle, x_start, local_iters, eta, params, key, |k| {
        let mut samples = key.path(Purpose::DataSample, k).stream();
        let mut dirs = key.path(Purpose::Direction, k).stream();
        EstimatorDraws::draw(oracle, params, &mut samples, &mut dirs)
    })
}

/// [`local_update`] with caller-supplied draws for each step.
pub fn local_update_with<F>(
    oracle: &dyn LossOracle,
    x_start: &[f64],
    local_iters: usize,
    eta: f64,
    params: &EstimatorParams,
    key: StreamKey,
    mut draws: F,
) -> Result<LocalRunResult>
where
    F: FnMut(usize) -> Result<EstimatorDraws>,
{
    check_start(x_start, local_iters, eta)?;
    let mut x = ModelVector::from(x_start);
    for k in 0..local_iters {
        let d = draws(k)?;
        let e = estimate_with_draws(oracle, &x, params, &d)?;
        if !e.is_finite() {
            return Err(divergence(key, k));
        }
        x.axpy(-eta, &e);
        if !x.is_finite() {
            return Err(divergence(key, k));
        }
    }
    Ok(LocalRunResult::new(x_start, &x))
}

/// First-order baseline: `H` steps of mini-batch SGD with `b1` samples per step.
pub fn fedavg_local_update(
    oracle: &dyn LossOracle,
    x_start: &[f64],
    local_iters: usize,
    eta: f64,
    b1: usize,
    key: StreamKey,
) -> Result<LocalRunResult> {
    check_start(x_start, local_iters, eta)?;
    if b1 == 0 {
        return Err(Error::InvalidParams("b1 must be >= 1".into()));
    }
    let n = oracle.num_samples();
    let mut x = ModelVector::from(x_start);
    for k in 0..local_iters {
        let mut rng = key.path(Purpose::DataSample, k).stream();
        let batch: Vec<usize> = (0..b1).map(|_| rng.random_range(0..n)).collect();
        let g = oracle.sample_gradient(&x, &batch).ok_or(Error::UnsupportedBaseline)??;
        x.axpy(-eta, &g);
        if !x.is_finite() {
            return Err(divergence(key, k));
        }
    }
    Ok(LocalRunResult::new(x_start, &x))
}

fn check_start(x_start: &[f64], local_iters: usize, eta: f64) -> Result<()> {
    if local_iters == 0 {
        return Err(Error::InvalidParams("H must be >= 1".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "learning rate must be finite and >= 0, got {eta}"
        )));
    }
    if x_start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("starting point is not finite".into()));
    }
    Ok(())
}

fn divergence(key: StreamKey, step: usize) -> Error {
    Error::Divergence {
        device: key.device,
        round: key.round,
        step,
    }
}
