use std::sync::Arc;

use super::{check_dim, check_sample, LossOracle};
use crate::data::Dataset;
use crate::error::{Error, OracleError, Result};
use crate::vector::{dot_f32, ModelVector};

/// Multinomial logistic regression on a device's slice of a dataset.
///
/// The weight matrix `W` (`feature_dim x classes`) is flattened
/// column-major: `x[k * feature_dim + j] = W[j, k]`, so class `k`'s weights
/// are contiguous. `F(x, xi) = -log softmax(W^T a_xi)[y_xi]`.
#[derive(Debug, Clone)]
pub struct SoftmaxLoss {
    data: Arc<Dataset>,
    indices: Vec<usize>,
}

impl SoftmaxLoss {
    pub fn new(data: Arc<Dataset>, indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidParams("a device needs at least one sample".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::InvalidParams(format!("sample index {bad} out of range")));
        }
        Ok(Self { data, indices })
    }

    /// Oracle over every sample of `data`.
    pub fn whole(data: Arc<Dataset>) -> Result<Self> {
        let indices = (0..data.len()).collect();
        Self::new(data, indices)
    }

    pub fn classes(&self) -> usize {
        self.data.classes()
    }

    fn logits(&self, x: &[f64], row: usize) -> Vec<f64> {
        logits(x, self.data.features(row), self.data.classes())
    }

    fn label(&self, row: usize) -> Result<usize, OracleError> {
        let label = self.data.label(row);
        if label >= self.data.classes() {
            return Err(OracleError::LabelOutOfRange {
                label,
                classes: self.data.classes(),
            });
        }
        Ok(label)
    }

    fn accumulate_gradient(&self, x: &[f64], row: usize, weight: f64, grad: &mut [f64]) -> Result<(), OracleError> {
        let label = self.label(row)?;
        let features = self.data.features(row);
        let d = features.len();
        let lsm = log_softmax(&self.logits(x, row));
        for (k, l) in lsm.iter().enumerate() {
            let coeff = weight * (l.exp() - if k == label { 1.0 } else { 0.0 });
            if coeff != 0.0 {
                for (g, a) in grad[k * d..(k + 1) * d].iter_mut().zip(features) {
                    *g += coeff * f64::from(*a);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn logits(x: &[f64], features: &[f32], classes: usize) -> Vec<f64> {
    let d = features.len();
    (0..classes)
        .map(|k| dot_f32(&x[k * d..(k + 1) * d], features))
        .collect()
}

/// Numerically stable `log softmax(z)`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Fraction of `data` whose arg-max class under `x` equals the label.
/// Ties resolve to the lowest class index.
pub fn accuracy(x: &[f64], data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = (0..data.len())
        .filter(|&i| {
            let z = logits(x, data.features(i), data.classes());
            let best = z
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc },
                )
                .0;
            best == data.label(i)
        })
        .count();
    correct as f64 / data.len() as f64
}

impl LossOracle for SoftmaxLoss {
    fn dim(&self) -> usize {
        self.data.feature_dim() * self.data.classes()
    }

    fn num_samples(&self) -> usize {
        self.indices.len()
    }

    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError> {
        check_dim(self.dim(), x)?;
        check_sample(sample, self.indices.len())?;
        let row = self.indices[sample];
        let label = self.label(row)?;
        Ok(-log_softmax(&self.logits(x, row))[label])
    }

    fn eval_gradient(&self, x: &[f64]) -> Option<Result<ModelVector, OracleError>> {
        let all: Vec<usize> = (0..self.indices.len()).collect();
        self.sample_gradient(x, &all)
    }

    fn sample_gradient(&self, x: &[f64], samples: &[usize]) -> Option<Result<ModelVector, OracleError>> {
        let run = || -> Result<ModelVector, OracleError> {
            check_dim(self.dim(), x)?;
            if samples.is_empty() {
                return Err(OracleError::InvalidInput("empty mini-batch".into()));
            }
            let mut grad = ModelVector::zeros(self.dim());
            let w = 1.0 / samples.len() as f64;
            for &s in samples {
                check_sample(s, self.indices.len())?;
                self.accumulate_gradient(x, self.indices[s], w, &mut grad)?;
            }
            Ok(grad)
        };
        Some(run())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::testing::finite_difference_gradient;
    use approx::assert_relative_eq;

    fn dataset(rows: &[&[f32]], labels: &[usize], classes: usize) -> Arc<Dataset> {
        let d = rows[0].len();
        let features = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Arc::new(Dataset::new(features, labels.to_vec(), d, classes).unwrap())
    }

    #[test]
    fn zero_weights_give_log_k() {
        let ds = dataset(&[&[0.3, 0.9, 0.1]], &[4], 10);
        let f = SoftmaxLoss::whole(ds).unwrap();
        assert_relative_eq!(f.value(&vec![0.0; 30], 0).unwrap(), 10f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn equal_logits_give_log_two() {
        // a = (1), W = [z, z]: logits (z, z).
        let ds = dataset(&[&[1.0]], &[1], 2);
        let f = SoftmaxLoss::whole(ds).unwrap();
        for z in [-30.0, 0.0, 2.5, 700.0] {
            assert_relative_eq!(f.value(&[z, z], 0).unwrap(), 2f64.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn hand_value_for_logits_one_zero() {
        let ds = dataset(&[&[1.0]], &[0], 2);
        let f = SoftmaxLoss::whole(ds).unwrap();
        let v = f.value(&[1.0, 0.0], 0).unwrap();
        let e = std::f64::consts::E;
        assert_relative_eq!(v, -(e / (e + 1.0)).ln(), max_relative = 1e-14);
        assert_relative_eq!(v, 0.313262, epsilon = 1e-6);
    }

    #[test]
    fn column_major_layout() {
        // d_feat = 2, K = 3; only W[1, 2] is non-zero, at flat index 2*2 + 1.
        let ds = dataset(&[&[0.0, 1.0]], &[2], 3);
        let f = SoftmaxLoss::whole(ds).unwrap();
        let mut x = vec![0.0; 6];
        x[5] = 3.0;
        let lsm = log_softmax(&[0.0, 0.0, 3.0]);
        assert_relative_eq!(f.value(&x, 0).unwrap(), -lsm[2], max_relative = 1e-14);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let z = [3.0, -1.0, 0.25, 12.0, -40.0];
        let total: f64 = log_softmax(&z).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn gradient_at_zero_two_classes() {
        let a = [0.5f32, 0.25, 1.0];
        let ds = dataset(&[&a], &[0], 2);
        let f = SoftmaxLoss::whole(ds).unwrap();
        let g = f.eval_gradient(&[0.0; 6]).unwrap().unwrap();
        for j in 0..3 {
            assert_relative_eq!(g[j], -0.5 * f64::from(a[j]), max_relative = 1e-15);
            assert_relative_eq!(g[3 + j], 0.5 * f64::from(a[j]), max_relative = 1e-15);
        }
    }

    #[test]
    fn zero_features_zero_gradient() {
        let ds = dataset(&[&[0.0, 0.0]], &[1], 3);
        let f = SoftmaxLoss::whole(ds).unwrap();
        let g = f.eval_gradient(&[0.4, -0.2, 1.0, 0.0, 2.0, 0.1]).unwrap().unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn duplicated_dataset_same_gradient() {
        let rows: [&[f32]; 3] = [&[0.1, 0.7], &[0.9, 0.2], &[0.4, 0.4]];
        let once = SoftmaxLoss::whole(dataset(&rows, &[0, 1, 2], 3)).unwrap();
        let doubled_rows: Vec<&[f32]> = rows.iter().chain(rows.iter()).copied().collect();
        let twice = SoftmaxLoss::whole(dataset(&doubled_rows, &[0, 1, 2, 0, 1, 2], 3)).unwrap();
        let x = [0.3, -0.1, 0.5, 0.2, -0.7, 0.05];
        let a = once.eval_gradient(&x).unwrap().unwrap();
        let b = twice.eval_gradient(&x).unwrap().unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert_relative_eq!(*u, *v, max_relative = 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let rows: [&[f32]; 4] = [&[0.1, 0.7, 0.3], &[0.9, 0.2, 0.0], &[0.4, 0.4, 1.0], &[1.0, 0.0, 0.5]];
        let f = SoftmaxLoss::whole(dataset(&rows, &[0, 1, 2, 1], 3)).unwrap();
        let x = [0.3, -0.1, 0.5, 0.2, -0.7, 0.05, 1.0, 0.0, -0.4];
        let fd = finite_difference_gradient(&f, &x, 1e-6);
        let g = f.eval_gradient(&x).unwrap().unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert_relative_eq!(*a, *b, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn errors() {
        let f = SoftmaxLoss::whole(dataset(&[&[1.0]], &[0], 2)).unwrap();
        assert!(matches!(f.value(&[0.0], 0), Err(OracleError::DimensionMismatch { .. })));
        assert!(matches!(
            f.value(&[0.0, 0.0], 1),
            Err(OracleError::SampleOutOfRange { .. })
        ));
        assert!(SoftmaxLoss::new(dataset(&[&[1.0]], &[0], 2), vec![]).is_err());
    }

    #[test]
    fn accuracy_counts_argmax() {
        let ds = dataset(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]], &[0, 1, 1], 2);
        // W = I: class k scores feature k.
        let x = [1.0, 0.0, 0.0, 1.0];
        assert_relative_eq!(accuracy(&x, &ds), 2.0 / 3.0);
    }
}
