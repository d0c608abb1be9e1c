//! Random-direction sampling and the mini-batch two-point gradient estimator.
//!
//! For a device loss `F(x, xi)` queried by value only, the estimator is
//!
//! ```text
//! e = 1/(b1*b2) * sum_m sum_n (d/mu) * (F(x + mu*v_n, xi_m) - F(x, xi_m)) * v_n
//! ```
//!
//! with `xi_m` drawn from the device's local samples and `v_n` uniform on the
//! unit sphere. Its expectation is the gradient of the mu-smoothed loss.
//! The base value `F(x, xi_m)` is evaluated once per sample and reused for
//! every direction, so one call costs `b1*b2 + b1` oracle evaluations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::losses::LossOracle;
use crate::vector::ModelVector;

/// A unit-norm direction in parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(ModelVector);

impl Direction {
    /// Normalizes `v`. Fails on the zero vector or a non-finite norm.
    pub fn new(v: impl Into<ModelVector>) -> Result<Self> {
        let mut v = v.into();
        if v.dim() == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let norm = v.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "direction must have a finite non-zero norm, got {norm}"
            )));
        }
        v.iter_mut().for_each(|c| *c /= norm);
        Ok(Self(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// Smoothing radius and batch sizes of the estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorParams {
    mu: f64,
    b1: usize,
    b2: usize,
    dim: usize,
}

impl EstimatorParams {
    pub fn new(mu: f64, b1: usize, b2: usize, dim: usize) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParams(format!("mu must be positive, got {mu}")));
        }
        if b1 == 0 || b2 == 0 {
            return Err(Error::InvalidParams(format!(
                "batch sizes must be positive, got b1={b1}, b2={b2}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(Self { mu, b1, b2, dim })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn b1(&self) -> usize {
        self.b1
    }
    pub fn b2(&self) -> usize {
        self.b2
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Oracle value calls made by one estimator call.
    pub fn value_calls(&self) -> usize {
        self.b1 * self.b2 + self.b1
    }
}

/// Uniform draw from the unit sphere in `R^dim` (normalized Gaussian).
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<Direction> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm_sq: f64 = v.iter().map(|c| c * c).sum();
        // A zero draw has probability zero but would break normalization.
        if norm_sq > 0.0 {
            let norm = norm_sq.sqrt();
            return Ok(Direction(v.into_iter().map(|c| c / norm).collect()));
        }
    }
}

/// `(d/mu) * (F(x + mu*v, xi) - F(x, xi)) * v`
pub fn two_point_term(
    oracle: &dyn LossOracle,
    x: &[f64],
    v: &Direction,
    mu: f64,
    sample: usize,
) -> Result<ModelVector> {
    let base = oracle.value(x, sample)?;
    two_point_from_base(oracle, x, base, v, mu, sample)
}

fn perturbed(x: &[f64], v: &Direction, mu: f64) -> Vec<f64> {
    x.iter().zip(v.as_slice()).map(|(a, b)| a + mu * b).collect()
}

fn two_point_from_base(
    oracle: &dyn LossOracle,
    x: &[f64],
    base: f64,
    v: &Direction,
    mu: f64,
    sample: usize,
) -> Result<ModelVector> {
    check_dims(x, v)?;
    let shifted = oracle.value(&perturbed(x, v, mu), sample)?;
    let coeff = x.len() as f64 * (shifted - base) / mu;
    Ok(v.as_slice().iter().map(|c| coeff * c).collect())
}

fn check_dims(x: &[f64], v: &Direction) -> Result<()> {
    if x.len() != v.dim() {
        return Err(Error::InvalidParams(format!(
            "direction dimension {} does not match model dimension {}",
            v.dim(),
            x.len()
        )));
    }
    Ok(())
}

/// The random inputs of one estimator call.
#[derive(Debug, Clone)]
pub struct EstimatorDraws {
    pub samples: Vec<usize>,
    pub directions: Vec<Direction>,
}

impl EstimatorDraws {
    /// `b1` sample handles uniform over the oracle's local set (with
    /// replacement) from `sample_rng`, then `b2` directions from `dir_rng`.
    pub fn draw<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        oracle: &dyn LossOracle,
        params: &EstimatorParams,
        sample_rng: &mut R1,
        dir_rng: &mut R2,
    ) -> Result<Self> {
        let n = oracle.num_samples();
        if n == 0 {
            return Err(Error::InvalidParams("oracle has no local samples".into()));
        }
        let samples = (0..params.b1).map(|_| sample_rng.random_range(0..n)).collect();
        let directions = (0..params.b2)
            .map(|_| sample_unit_sphere(dir_rng, params.dim))
            .collect::<Result<_>>()?;
        Ok(Self { samples, directions })
    }
}

/// Mini-batch estimator drawing samples and directions from `rng`.
pub fn minibatch_estimator<R: Rng + ?Sized>(
    oracle: &dyn LossOracle,
    x: &[f64],
    params: &EstimatorParams,
    rng: &mut R,
) -> Result<ModelVector> {
    let draws = {
        let n = oracle.num_samples();
        if n == 0 {
            return Err(Error::InvalidParams("oracle has no local samples".into()));
        }
        let samples: Vec<usize> = (0..params.b1).map(|_| rng.random_range(0..n)).collect();
        let directions = (0..params.b2)
            .map(|_| sample_unit_sphere(rng, params.dim))
            .collect::<Result<_>>()?;
        EstimatorDraws { samples, directions }
    };
    estimate_with_draws(oracle, x, params, &draws)
}

/// Mini-batch estimator over explicit draws. Every sample is paired with
/// every direction; base values are computed once per sample.
pub fn estimate_with_draws(
    oracle: &dyn LossOracle,
    x: &[f64],
    params: &EstimatorParams,
    draws: &EstimatorDraws,
) -> Result<ModelVector> {
    if x.len() != params.dim {
        return Err(Error::InvalidParams(format!(
            "model dimension {} does not match estimator dimension {}",
            x.len(),
            params.dim
        )));
    }
    if draws.samples.is_empty() || draws.directions.is_empty() {
        return Err(Error::InvalidParams(
            "estimator needs at least one sample and one direction".into(),
        ));
    }
    for v in &draws.directions {
        check_dims(x, v)?;
    }
    let bases = draws
        .samples
        .iter()
        .map(|&s| oracle.value(x, s))
        .collect::<Result<Vec<f64>, _>>()?;

    // Accumulate one scalar per direction, then expand: the output is a
    // combination of the sampled directions only.
    let mut coeffs = vec![0.0; draws.directions.len()];
    for (v, coeff) in draws.directions.iter().zip(coeffs.iter_mut()) {
        let shifted_x = perturbed(x, v, params.mu);
        for (&s, &base) in draws.samples.iter().zip(&bases) {
            let shifted = oracle.value(&shifted_x, s)?;
            *coeff += shifted - base;
        }
    }
    let scale = params.dim as f64 / (params.mu * (draws.samples.len() * draws.directions.len()) as f64);
    let mut out = ModelVector::zeros(params.dim);
    for (v, coeff) in draws.directions.iter().zip(coeffs) {
        out.axpy(scale * coeff, v.as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{LinearLoss, QuadraticDeviceLoss};
    use crate::rng::{Purpose, SeedPath};
    use approx::assert_relative_eq;

    fn unit(v: &[f64]) -> Direction {
        Direction::new(v.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_sphere_is_plus_minus_one() {
        let mut rng = SeedPath::new(1, Purpose::Direction).stream();
        let mut plus = 0usize;
        let draws = 20_000;
        for _ in 0..draws {
            let v = sample_unit_sphere(&mut rng, 1).unwrap();
            let c = v.as_slice()[0];
            assert!(c == 1.0 || c == -1.0);
            if c > 0.0 {
                plus += 1;
            }
        }
        // Binomial(20000, 1/2): sd ~ 70.7.
        assert!((plus as f64 - 10_000.0).abs() < 4.0 * 70.8);
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut rng = SeedPath::new(1, Purpose::Direction).stream();
        assert!(matches!(
            sample_unit_sphere(&mut rng, 0),
            Err(Error::InvalidDimension(0))
        ));
    }

    #[test]
    fn sphere_draws_have_unit_norm() {
        let mut rng = SeedPath::new(9, Purpose::Direction).stream();
        for d in [1, 2, 3, 17, 500] {
            for _ in 0..50 {
                let v = sample_unit_sphere(&mut rng, d).unwrap();
                let n: f64 = v.as_slice().iter().map(|c| c * c).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn two_point_linear_is_exact() {
        let f = LinearLoss::new(vec![1.0, 2.0, 3.0], 0.0);
        let out = two_point_term(&f, &[0.0; 3], &unit(&[1.0, 0.0, 0.0]), 0.1, 0).unwrap();
        assert_relative_eq!(out[0], 3.0, max_relative = 1e-12);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn two_point_constant_is_zero() {
        let f = LinearLoss::new(vec![0.0; 4], 7.5);
        let mut rng = SeedPath::new(3, Purpose::Direction).stream();
        for mu in [1e-3, 0.1, 10.0] {
            let v = sample_unit_sphere(&mut rng, 4).unwrap();
            let out = two_point_term(&f, &[1.0, -2.0, 0.5, 3.0], &v, mu, 0).unwrap();
            assert!(out.iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn two_point_quadratic_hand_value() {
        // F = 1/2 |x|^2, d=2, x=(1,0), mu=0.5, v=(0,1):
        // 2 * (0.5*(1+0.25) - 0.5) / 0.5 = 0.5
        let q = QuadraticDeviceLoss::isotropic(2, 1.0);
        let out = two_point_term(&q, &[1.0, 0.0], &unit(&[0.0, 1.0]), 0.5, 0).unwrap();
        assert_relative_eq!(out[0], 0.0);
        assert_relative_eq!(out[1], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn two_point_propagates_oracle_errors() {
        let f = LinearLoss::new(vec![1.0, 2.0], 0.0);
        let err = two_point_term(&f, &[0.0, 0.0], &unit(&[1.0, 0.0]), 0.1, 5).unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn params_validation() {
        assert!(EstimatorParams::new(0.0, 1, 1, 3).is_err());
        assert!(EstimatorParams::new(-1.0, 1, 1, 3).is_err());
        assert!(EstimatorParams::new(f64::NAN, 1, 1, 3).is_err());
        assert!(EstimatorParams::new(0.1, 0, 1, 3).is_err());
        assert!(EstimatorParams::new(0.1, 1, 0, 3).is_err());
        assert!(matches!(
            EstimatorParams::new(0.1, 1, 1, 0),
            Err(Error::InvalidDimension(0))
        ));
        assert_eq!(EstimatorParams::new(0.1, 25, 20, 3).unwrap().value_calls(), 525);
    }

    #[test]
    fn degenerate_batch_matches_single_term() {
        let q = QuadraticDeviceLoss::isotropic(3, 2.0);
        let p = EstimatorParams::new(0.05, 1, 1, 3).unwrap();
        let x = [0.3, -1.0, 2.0];
        let path = SeedPath::new(11, Purpose::Direction);
        let est = minibatch_estimator(&q, &x, &p, &mut path.stream()).unwrap();

        // Replay the stream: one sample handle, then one direction.
        let mut rng = path.stream();
        let s = rng.random_range(0..q.num_samples());
        let v = sample_unit_sphere(&mut rng, 3).unwrap();
        let single = two_point_term(&q, &x, &v, 0.05, s).unwrap();
        assert_eq!(est, single);
    }

    #[test]
    fn single_direction_output_is_parallel() {
        let q = QuadraticDeviceLoss::isotropic(5, 1.0);
        let p = EstimatorParams::new(0.01, 4, 1, 5).unwrap();
        let mut rng = SeedPath::new(5, Purpose::Direction).stream();
        let draws = EstimatorDraws::draw(&q, &p, &mut rng.clone(), &mut rng).unwrap();
        let out = estimate_with_draws(&q, &[1.0, 2.0, 3.0, 4.0, 5.0], &p, &draws).unwrap();
        let v = draws.directions[0].as_slice();
        let c = out.dot(v);
        for (o, vi) in out.iter().zip(v) {
            assert!((o - c * vi).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn deterministic_for_same_stream() {
        let q = QuadraticDeviceLoss::isotropic(6, 1.5);
        let p = EstimatorParams::new(0.01, 3, 4, 6).unwrap();
        let x = [0.5; 6];
        let path = SeedPath::new(77, Purpose::Direction).device(2).round(3).step(4);
        let a = minibatch_estimator(&q, &x, &p, &mut path.stream()).unwrap();
        let b = minibatch_estimator(&q, &x, &p, &mut path.stream()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 6);
    }
}
