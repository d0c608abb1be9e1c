use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_dim, check_sample, LossOracle};
use crate::error::{Error, OracleError, Result};
use crate::vector::{dot, ModelVector};

/// Synthetic device loss
/// `F(x, xi) = 1/2 x^T A x + b^T x + g_xi^T x`.
///
/// The per-sample perturbations `g_xi` are centered over the local set, so
/// the mean local loss `f_i` is exactly the deterministic quadratic and the
/// stochastic gradients satisfy the second-moment bound with `c_g = 1` and
/// `sigma_g^2 = mean |g_xi|^2`.
#[derive(Debug, Clone)]
pub struct QuadraticDeviceLoss {
    dim: usize,
    /// Row-major, symmetric.
    a: Vec<f64>,
    b: Vec<f64>,
    perturbations: Vec<Vec<f64>>,
    noise_scale: f64,
}

impl QuadraticDeviceLoss {
    /// Deterministic quadratic with a single sample. `a` must be symmetric PSD.
    pub fn new(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if a.nrows() != dim || a.ncols() != dim {
            return Err(Error::InvalidParams(format!(
                "A is {}x{}, b has length {dim}",
                a.nrows(),
                a.ncols()
            )));
        }
        let scale = a.amax().max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidParams(format!("A is not symmetric at ({i}, {j})")));
                }
            }
        }
        let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(Error::InvalidParams(format!(
                "A is not positive semi-definite (smallest eigenvalue {min_eig})"
            )));
        }
        let mut row_major = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                row_major.push(0.5 * (a[(i, j)] + a[(j, i)]));
            }
        }
        Ok(Self {
            dim,
            a: row_major,
            b,
            perturbations: vec![vec![0.0; dim]],
            noise_scale: 0.0,
        })
    }

    /// `1/2 * scale * |x|^2`, one sample.
    pub fn isotropic(dim: usize, scale: f64) -> Self {
        Self::new(DMatrix::identity(dim, dim) * scale, vec![0.0; dim]).expect("scaled identity is symmetric PSD")
    }

    /// Replaces the sample set by `samples` zero-mean Gaussian linear
    /// perturbations of per-component standard deviation `noise_scale`.
    pub fn with_sample_noise<R: Rng + ?Sized>(mut self, noise_scale: f64, samples: usize, rng: &mut R) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidParams("a device needs at least one sample".into()));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "noise scale must be >= 0, got {noise_scale}"
            )));
        }
        let mut g: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                (0..self.dim)
                    .map(|_| noise_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        for j in 0..self.dim {
            let mean = g.iter().map(|v| v[j]).sum::<f64>() / samples as f64;
            g.iter_mut().for_each(|v| v[j] -= mean);
        }
        if noise_scale == 0.0 {
            g.iter_mut().for_each(|v| v.fill(0.0));
        }
        self.perturbations = g;
        self.noise_scale = noise_scale;
        Ok(self)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.a)
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// Largest eigenvalue of `A`: the smoothness constant of this device.
    pub fn lambda_max(&self) -> f64 {
        SymmetricEigen::new(self.matrix()).eigenvalues.max()
    }

    /// `mean_xi |g_xi|^2`.
    pub fn perturbation_second_moment(&self) -> f64 {
        self.perturbations.iter().map(|g| dot(g, g)).sum::<f64>() / self.perturbations.len() as f64
    }

    /// `A x + b`.
    pub fn gradient(&self, x: &[f64]) -> ModelVector {
        self.a
            .chunks_exact(self.dim)
            .zip(&self.b)
            .map(|(row, bi)| dot(row, x) + bi)
            .collect()
    }

    /// `1/2 x^T A x + b^T x`.
    pub fn deterministic_value(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .a
            .chunks_exact(self.dim)
            .zip(x)
            .map(|(row, xi)| xi * dot(row, x))
            .sum();
        0.5 * quad + dot(&self.b, x)
    }
}

impl LossOracle for QuadraticDeviceLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> usize {
        self.perturbations.len()
    }

    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError> {
        check_dim(self.dim, x)?;
        check_sample(sample, self.perturbations.len())?;
        Ok(self.deterministic_value(x) + dot(&self.perturbations[sample], x))
    }

    fn mean_value(&self, x: &[f64]) -> Result<f64, OracleError> {
        check_dim(self.dim, x)?;
        Ok(self.deterministic_value(x))
    }

    fn eval_gradient(&self, x: &[f64]) -> Option<Result<ModelVector, OracleError>> {
        Some(check_dim(self.dim, x).map(|_| self.gradient(x)))
    }

    fn sample_gradient(&self, x: &[f64], samples: &[usize]) -> Option<Result<ModelVector, OracleError>> {
        let run = || -> Result<ModelVector, OracleError> {
            check_dim(self.dim, x)?;
            if samples.is_empty() {
                return Err(OracleError::InvalidInput("empty mini-batch".into()));
            }
            let mut g = self.gradient(x);
            let w = 1.0 / samples.len() as f64;
            for &s in samples {
                check_sample(s, self.perturbations.len())?;
                g.axpy(w, &self.perturbations[s]);
            }
            Ok(g)
        };
        Some(run())
    }
}
