//! Datasets, IDX ingestion, non-i.i.d. partitioning and synthetic instances.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use partition::{random_split, shard_partition, DevicePartition};
pub use synthetic::{make_synthetic_images, make_synthetic_quadratics, QuadraticTestbed, SyntheticQuadratics};

use crate::error::{Error, Result};

/// Labelled feature matrix. Features are stored row-major in single
/// precision (pixels in `[0, 1]`); all arithmetic on them is done in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    feature_dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f32>, labels: Vec<usize>, feature_dim: usize, classes: usize) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::InvalidParams(format!(
                "{} feature values for {} samples of dimension {feature_dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidParams(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self, index: usize) -> &[f32] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copy of the listed rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidParams(format!(
                    "index {i} out of range for {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, labels, self.feature_dim, self.classes)
    }

    /// Deterministic subsample of `count` rows taken at a fixed stride.
    pub fn stride_subsample(&self, count: usize) -> Result<Dataset> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidParams(format!(
                "cannot take {count} of {} samples",
                self.len()
            )));
        }
        let stride = self.len() / count;
        let indices: Vec<usize> = (0..count).map(|i| i * stride).collect();
        self.subset(&indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shapes() {
        assert!(Dataset::new(vec![0.0; 5], vec![0, 1], 3, 2).is_err());
        assert!(Dataset::new(vec![0.0; 6], vec![0, 2], 3, 2).is_err());
        assert!(Dataset::new(vec![0.0; 6], vec![0, 1], 3, 2).is_ok());
    }

    #[test]
    fn stride_subsample_is_deterministic_and_spread() {
        let n = 100;
        let ds = Dataset::new((0..n).map(|i| i as f32).collect(), vec![0; n], 1, 1).unwrap();
        let sub = ds.stride_subsample(10).unwrap();
        let got: Vec<f32> = (0..10).map(|i| sub.features(i)[0]).collect();
        assert_eq!(got, vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
        assert!(ds.stride_subsample(0).is_err());
        assert!(ds.stride_subsample(101).is_err());
    }
}
