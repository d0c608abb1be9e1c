//! Synthetic testbeds: heterogeneous quadratics with known constants and
//! Gaussian-blob images for attack demos.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::losses::{LossOracle, QuadraticDeviceLoss};
use crate::theory::AssumptionConstants;

/// Generator for heterogeneous quadratic federations.
///
/// Device `i` gets `A_i = A_0 + heterogeneity * S_i` and
/// `b_i = b_0 + heterogeneity * t_i`, where `A_0 = Q diag(lambda) Q^T` has a
/// spectrum uniform in `[eig_min, eig_max]`, `S_i = G G^T / dim` is a random
/// PSD matrix and `b_0`, `t_i` are standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTestbed {
    pub devices: usize,
    pub dim: usize,
    pub heterogeneity: f64,
    pub noise_scale: f64,
    pub samples_per_device: usize,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl QuadraticTestbed {
    pub fn new(devices: usize, dim: usize) -> Self {
        Self {
            devices,
            dim,
            heterogeneity: 0.5,
            noise_scale: 0.1,
            samples_per_device: 50,
            eig_min: 0.5,
            eig_max: 2.0,
        }
    }

    pub fn heterogeneity(mut self, h: f64) -> Self {
        self.heterogeneity = h;
        self
    }

    pub fn noise_scale(mut self, s: f64) -> Self {
        self.noise_scale = s;
        self
    }

    pub fn samples_per_device(mut self, n: usize) -> Self {
        self.samples_per_device = n;
        self
    }

    pub fn spectrum(mut self, eig_min: f64, eig_max: f64) -> Self {
        self.eig_min = eig_min;
        self.eig_max = eig_max;
        self
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SyntheticQuadratics> {
        let (n, d) = (self.devices, self.dim);
        if n == 0 || d == 0 {
            return Err(Error::InvalidParams(format!(
                "need N >= 1 and d >= 1, got N={n}, d={d}"
            )));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return Err(Error::InvalidParams("heterogeneity must be >= 0".into()));
        }
        if !(self.eig_min >= 0.0 && self.eig_max >= self.eig_min) {
            return Err(Error::InvalidParams("need 0 <= eig_min <= eig_max".into()));
        }
        let mut gauss =
            |rows: usize, cols: usize| DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let q = gauss(d, d).qr().q();
        let lambdas: Vec<f64> = (0..d)
            .map(|i| {
                if d == 1 {
                    self.eig_min
                } else {
                    self.eig_min + (self.eig_max - self.eig_min) * i as f64 / (d - 1) as f64
                }
            })
            .collect();
        let a0 = &q * DMatrix::from_diagonal(&DVector::from_vec(lambdas)) * q.transpose();
        let b0 = gauss(d, 1);

        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let g = gauss(d, d);
            let s = &g * g.transpose() / d as f64;
            let t = gauss(d, 1);
            let a = &a0 + s * self.heterogeneity;
            let a = (&a + a.transpose()) * 0.5;
            let b = &b0 + t * self.heterogeneity;
            raw.push((a, b));
        }
        let mut devices = Vec::with_capacity(n);
        for (a, b) in raw {
            let q = QuadraticDeviceLoss::new(a, b.iter().copied().collect())?.with_sample_noise(
                self.noise_scale,
                self.samples_per_device,
                rng,
            )?;
            devices.push(q);
        }
        Ok(SyntheticQuadratics::new(devices))
    }
}

/// `make_synthetic_quadratics(N, d, heterogeneity, noise)` with the default
/// spectrum and 50 samples per device.
pub fn make_synthetic_quadratics<R: Rng + ?Sized>(
    devices: usize,
    dim: usize,
    heterogeneity: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Result<SyntheticQuadratics> {
    QuadraticTestbed::new(devices, dim)
        .heterogeneity(heterogeneity)
        .noise_scale(noise_scale)
        .generate(rng)
}

/// A quadratic federation with its global objective
/// `f(x) = 1/N sum_i f_i(x) = 1/2 x^T A x + b^T x`.
#[derive(Debug, Clone)]
pub struct SyntheticQuadratics {
    devices: Vec<QuadraticDeviceLoss>,
    mean_a: DMatrix<f64>,
    mean_b: DVector<f64>,
}

impl SyntheticQuadratics {
    pub fn new(devices: Vec<QuadraticDeviceLoss>) -> Self {
        assert!(!devices.is_empty(), "a federation needs at least one device");
        let d = devices[0].dim();
        let n = devices.len() as f64;
        let mut mean_a = DMatrix::zeros(d, d);
        let mut mean_b = DVector::zeros(d);
        for q in &devices {
            mean_a += q.matrix();
            mean_b += DVector::from_column_slice(q.linear_term());
        }
        Self {
            devices,
            mean_a: mean_a / n,
            mean_b: mean_b / n,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_b.len()
    }

    pub fn devices(&self) -> &[QuadraticDeviceLoss] {
        &self.devices
    }

    pub fn oracles(&self) -> Vec<Arc<dyn LossOracle>> {
        self.devices
            .iter()
            .map(|q| Arc::new(q.clone()) as Arc<dyn LossOracle>)
            .collect()
    }

    pub fn global_value(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        0.5 * xv.dot(&(&self.mean_a * &xv)) + self.mean_b.dot(&xv)
    }

    pub fn global_gradient(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.mean_a * xv + &self.mean_b).iter().copied().collect()
    }

    /// `x* = -A^{-1} b` and `f(x*)`, when the averaged Hessian is positive definite.
    pub fn optimum(&self) -> Option<(Vec<f64>, f64)> {
        let chol = self.mean_a.clone().cholesky()?;
        let x = -chol.solve(&self.mean_b);
        let x: Vec<f64> = x.iter().copied().collect();
        let f = self.global_value(&x);
        Some((x, f))
    }

    /// `L = max_i lambda_max(A_i)`.
    pub fn smoothness(&self) -> f64 {
        self.devices
            .iter()
            .map(QuadraticDeviceLoss::lambda_max)
            .fold(0.0, f64::max)
    }

    /// `(c_h, sigma_h^2)` such that
    /// `|grad f(x) - grad f_i(x)|^2 <= c_h |grad f(x)|^2 + sigma_h^2` for all x.
    ///
    /// With `D_i = A - A_i` and `r_i = -grad f_i(x*)`, the dissimilarity is
    /// `D_i A^{-1} grad f(x) + r_i`, so `c_h = 2 max |D_i A^{-1}|_2^2` and
    /// `sigma_h^2 = 2 max |r_i|^2`.
    pub fn dissimilarity_bounds(&self) -> Option<(f64, f64)> {
        let (x_star, _) = self.optimum()?;
        let inv = self.mean_a.clone().try_inverse()?;
        let mut c_h: f64 = 0.0;
        let mut sigma_h_sq: f64 = 0.0;
        for q in &self.devices {
            let d_i = &self.mean_a - q.matrix();
            let op = (&d_i * &inv).singular_values().max();
            c_h = c_h.max(2.0 * op * op);
            let r: f64 = q.gradient(&x_star).norm_sq();
            sigma_h_sq = sigma_h_sq.max(2.0 * r);
        }
        Some((c_h, sigma_h_sq))
    }

    /// Assumption constants of this instance: `c_g = 1` and
    /// `sigma_g^2 = max_i mean |g_xi|^2` from the centered linear perturbations.
    pub fn assumption_constants(&self) -> Option<AssumptionConstants> {
        let (_, f_star) = self.optimum()?;
        let (c_h, sigma_h_sq) = self.dissimilarity_bounds()?;
        let sigma_g_sq = self
            .devices
            .iter()
            .map(QuadraticDeviceLoss::perturbation_second_moment)
            .fold(0.0, f64::max);
        Some(AssumptionConstants {
            l: self.smoothness(),
            c_g: 1.0,
            sigma_g_sq,
            c_h,
            sigma_h_sq,
            f_star,
        })
    }
}

/// Gaussian blobs around `classes` random prototypes, clipped to `[0, 1]`.
pub fn make_synthetic_images<R: Rng + ?Sized>(
    samples: usize,
    feature_dim: usize,
    classes: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes == 0 || feature_dim == 0 {
        return Err(Error::InvalidParams("need at least one class and one feature".into()));
    }
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..feature_dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut features = Vec::with_capacity(samples * feature_dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = i % classes;
        labels.push(k);
        for &p in &prototypes[k] {
            let noise: f64 = rng.sample(StandardNormal);
            features.push((p + spread * noise).clamp(0.0, 1.0) as f32);
        }
    }
    Dataset::new(features, labels, feature_dim, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedPath};
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> crate::rng::RngStream {
        SeedPath::new(seed, Purpose::Instance).stream()
    }

    #[test]
    fn zero_heterogeneity_gives_identical_devices() {
        let fed = make_synthetic_quadratics(4, 3, 0.0, 0.0, &mut rng(1)).unwrap();
        let x = [0.3, -0.4, 1.1];
        let g0 = fed.devices()[0].gradient(&x);
        for q in fed.devices() {
            assert_eq!(q.gradient(&x), g0);
        }
        let (c_h, sigma_h_sq) = fed.dissimilarity_bounds().unwrap();
        assert!(c_h < 1e-20 && sigma_h_sq < 1e-20);
    }

    #[test]
    fn single_device_optimum_is_minus_a_inverse_b() {
        let fed = make_synthetic_quadratics(1, 4, 0.7, 0.0, &mut rng(2)).unwrap();
        let q = &fed.devices()[0];
        let (x_star, _) = fed.optimum().unwrap();
        let expected = -q.matrix().try_inverse().unwrap() * DVector::from_column_slice(q.linear_term());
        for (a, b) in x_star.iter().zip(expected.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimum_agrees_with_gradient_descent() {
        // Independent route: 10^4 steps of full-gradient descent at 1/L.
        let fed = make_synthetic_quadratics(5, 4, 0.5, 0.0, &mut rng(3)).unwrap();
        let (_, f_star) = fed.optimum().unwrap();
        let step = 1.0 / fed.smoothness();
        let mut x = vec![0.0; 4];
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..4)
                .map(|j| fed.devices().iter().map(|q| q.gradient(&x)[j]).sum::<f64>() / 5.0)
                .collect();
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= step * gi);
        }
        let f_gd: f64 = fed.devices().iter().map(|q| q.deterministic_value(&x)).sum::<f64>() / 5.0;
        assert!((f_gd - f_star).abs() <= 1e-8, "{f_gd} vs {f_star}");
    }

    #[test]
    fn dissimilarity_bound_holds_on_grid() {
        let fed = QuadraticTestbed::new(6, 5)
            .heterogeneity(0.8)
            .generate(&mut rng(4))
            .unwrap();
        let (c_h, sigma_h_sq) = fed.dissimilarity_bounds().unwrap();
        let mut r = rng(5);
        for _ in 0..500 {
            let scale: f64 = 10f64.powf(r.random_range(-2.0..2.0));
            let x: Vec<f64> = (0..5).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
            let g = fed.global_gradient(&x);
            let g_sq: f64 = g.iter().map(|v| v * v).sum();
            for q in fed.devices() {
                let gi = q.gradient(&x);
                let diff: f64 = g.iter().zip(gi.iter()).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(diff <= c_h * g_sq + sigma_h_sq + 1e-9 * (1.0 + diff));
            }
        }
    }

    #[test]
    fn smoothness_bounds_every_device() {
        let fed = make_synthetic_quadratics(3, 6, 1.0, 0.1, &mut rng(6)).unwrap();
        let l = fed.smoothness();
        for q in fed.devices() {
            assert!(q.lambda_max() <= l);
        }
        let ac = fed.assumption_constants().unwrap();
        assert_eq!(ac.c_g, 1.0);
        assert!(ac.sigma_g_sq > 0.0);
        assert_eq!(ac.l, l);
    }

    #[test]
    fn synthetic_images_are_in_range() {
        let ds = make_synthetic_images(30, 8, 3, 0.2, &mut rng(7)).unwrap();
        assert_eq!(ds.len(), 30);
        assert_eq!(ds.classes(), 3);
        for i in 0..30 {
            assert!(ds.features(i).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
