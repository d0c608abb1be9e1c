//! Carlini-Wagner style attack loss over a black-box classifier.
//!
//! Images live in the centered box `(-1/2, 1/2)^d`. A shared perturbation
//! `x` maps image `z` to `z' = tanh(atanh(2z) + x) / 2`, which stays inside
//! the box for every `x`.

use std::sync::Arc;

use super::{check_dim, check_sample, log_softmax, LossOracle};
use crate::error::{Error, OracleError, Result};

/// Centered pixels are clamped to `+-PIXEL_CLAMP` before `atanh`.
pub const PIXEL_CLAMP: f64 = 0.5 - 1e-6;

/// What the classifier reports as `Phi_j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceKind {
    #[default]
    Logits,
    Probabilities,
}

/// A classifier the attacker can only query.
pub trait Classifier: Send + Sync {
    fn input_dim(&self) -> usize;

    fn classes(&self) -> usize;

    /// Class scores for a centered image.
    fn logits(&self, z: &[f64]) -> Vec<f64>;

    fn confidences(&self, z: &[f64], kind: ConfidenceKind) -> Vec<f64> {
        let logits = self.logits(z);
        match kind {
            ConfidenceKind::Logits => logits,
            ConfidenceKind::Probabilities => log_softmax(&logits).into_iter().map(f64::exp).collect(),
        }
    }

    fn predict(&self, z: &[f64]) -> usize {
        argmax(&self.logits(z))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc },
        )
        .0
}

/// Linear model on `[0, 1]` pixels: `logit_k = w_k . (z + 1/2) + bias_k`.
///
/// Weights use the same column-major layout as the softmax loss, so a trained
/// softmax model drops in directly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Vec<f64>,
    bias: Vec<f64>,
    input_dim: usize,
}

impl LinearClassifier {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, input_dim: usize) -> Result<Self> {
        let classes = bias.len();
        if input_dim == 0 || classes < 2 {
            return Err(Error::InvalidParams(
                "classifier needs input_dim >= 1 and >= 2 classes".into(),
            ));
        }
        if weights.len() != input_dim * classes {
            return Err(Error::InvalidParams(format!(
                "expected {} weights, got {}",
                input_dim * classes,
                weights.len()
            )));
        }
        if !weights.iter().chain(&bias).all(|w| w.is_finite()) {
            return Err(Error::InvalidParams("classifier weights must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            input_dim,
        })
    }

    /// Zero-bias classifier from a flattened softmax model.
    pub fn from_softmax(weights: Vec<f64>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || !weights.len().is_multiple_of(input_dim) {
            return Err(Error::InvalidParams(
                "weight count is not a multiple of input_dim".into(),
            ));
        }
        let classes = weights.len() / input_dim;
        Self::new(weights, vec![0.0; classes], input_dim)
    }
}

impl Classifier for LinearClassifier {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn classes(&self) -> usize {
        self.bias.len()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        self.bias
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let w = &self.weights[k * d..(k + 1) * d];
                b + w.iter().zip(z).map(|(w, z)| w * (z + 0.5)).sum::<f64>()
            })
            .collect()
    }
}

/// An image to attack, stored centered together with `atanh(2z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackImage {
    z: Vec<f64>,
    atanh: Vec<f64>,
    label: usize,
}

impl AttackImage {
    /// From pixels in `[0, 1]`; values are shifted and clamped into the open box.
    pub fn from_unit_pixels(pixels: &[f64], label: usize) -> Result<Self> {
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParams("pixels must be finite".into()));
        }
        let z = pixels
            .iter()
            .map(|p| (p - 0.5).clamp(-PIXEL_CLAMP, PIXEL_CLAMP))
            .collect();
        Self::from_centered(z, label)
    }

    /// From centered pixels; any component with `|z| >= 1/2` is rejected.
    pub fn from_centered(z: Vec<f64>, label: usize) -> Result<Self> {
        if let Some(bad) = z.iter().find(|v| !(v.abs() < 0.5)) {
            return Err(Error::Oracle(OracleError::InvalidInput(format!(
                "centered pixel {bad} outside the open interval (-1/2, 1/2)"
            ))));
        }
        let atanh = z.iter().map(|v| (2.0 * v).atanh()).collect();
        Ok(Self { z, atanh, label })
    }

    pub fn pixels(&self) -> &[f64] {
        &self.z
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// `z' = tanh(atanh(2z) + x) / 2`. Unperturbed components return `z` exactly.
    pub fn perturbed(&self, x: &[f64]) -> Vec<f64> {
        self.atanh
            .iter()
            .zip(&self.z)
            .zip(x)
            .map(|((a, z), x)| if *x == 0.0 { *z } else { 0.5 * (a + x).tanh() })
            .collect()
    }
}

/// Per-device attack loss; each local sample is one image.
#[derive(Clone)]
pub struct AttackLoss {
    classifier: Arc<dyn Classifier>,
    images: Vec<AttackImage>,
    c: f64,
    kind: ConfidenceKind,
}

impl std::fmt::Debug for AttackLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AttackLoss")
            .field("images", &self.images.len())
            .field("c", &self.c)
            .field("kind", &self.kind)
            .finish()
    }
}

impl AttackLoss {
    pub fn new(
        classifier: Arc<dyn Classifier>,
        images: Vec<AttackImage>,
        c: f64,
        kind: ConfidenceKind,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidParams("attack loss needs at least one image".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "distortion weight c must be > 0, got {c}"
            )));
        }
        let d = classifier.input_dim();
        for img in &images {
            if img.z.len() != d {
                return Err(Error::Oracle(OracleError::DimensionMismatch {
                    expected: d,
                    got: img.z.len(),
                }));
            }
            if img.label >= classifier.classes() {
                return Err(Error::Oracle(OracleError::LabelOutOfRange {
                    label: img.label,
                    classes: classifier.classes(),
                }));
            }
        }
        Ok(Self {
            classifier,
            images,
            c,
            kind,
        })
    }

    pub fn images(&self) -> &[AttackImage] {
        &self.images
    }

    pub fn classifier(&self) -> &Arc<dyn Classifier> {
        &self.classifier
    }

    /// `Phi_y(z') - max_{j != y} Phi_j(z')`; positive means the attack has not succeeded yet.
    pub fn margin(&self, x: &[f64], sample: usize) -> f64 {
        let img = &self.images[sample];
        margin_of(&self.classifier.confidences(&img.perturbed(x), self.kind), img.label)
    }

    /// Fraction of local images whose perturbed version is misclassified.
    pub fn success_rate(&self, x: &[f64]) -> f64 {
        let hits = self
            .images
            .iter()
            .filter(|img| self.classifier.predict(&img.perturbed(x)) != img.label)
            .count();
        hits as f64 / self.images.len() as f64
    }
}

fn margin_of(conf: &[f64], label: usize) -> f64 {
    let rival = conf
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    conf[label] - rival
}

impl LossOracle for AttackLoss {
    fn dim(&self) -> usize {
        self.classifier.input_dim()
    }

    fn num_samples(&self) -> usize {
        self.images.len()
    }

    fn value(&self, x: &[f64], sample: usize) -> Result<f64, OracleError> {
        check_dim(self.dim(), x)?;
        check_sample(sample, self.images.len())?;
        let img = &self.images[sample];
        let adv = img.perturbed(x);
        let conf = self.classifier.confidences(&adv, self.kind);
        let distortion: f64 = adv.iter().zip(&img.z).map(|(a, z)| (a - z) * (a - z)).sum();
        Ok(margin_of(&conf, img.label).max(0.0) + self.c * distortion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// One input, two classes: class 0 scores `2(z + 1/2)`, class 1 scores `1`.
    fn threshold_classifier() -> Arc<dyn Classifier> {
        Arc::new(LinearClassifier::new(vec![2.0, 0.0], vec![0.0, 1.0], 1).unwrap())
    }

    #[test]
    fn zero_perturbation_is_margin_only() {
        let img = AttackImage::from_centered(vec![0.3], 0).unwrap();
        let loss = AttackLoss::new(threshold_classifier(), vec![img], 1.0, ConfidenceKind::Logits).unwrap();
        // logits (1.6, 1.0)
        assert_relative_eq!(loss.value(&[0.0], 0).unwrap(), 0.6, max_relative = 1e-14);
    }

    #[test]
    fn misclassified_image_costs_nothing() {
        let img = AttackImage::from_centered(vec![-0.2], 0).unwrap();
        let loss = AttackLoss::new(threshold_classifier(), vec![img], 3.0, ConfidenceKind::Logits).unwrap();
        assert_eq!(loss.value(&[0.0], 0).unwrap(), 0.0);
    }

    #[test]
    fn hand_distortion_value() {
        // Class 1 wins everywhere, so only the distortion term remains.
        let clf: Arc<dyn Classifier> = Arc::new(LinearClassifier::new(vec![0.0, 0.0], vec![0.0, 5.0], 1).unwrap());
        let img = AttackImage::from_centered(vec![0.1], 0).unwrap();
        let loss = AttackLoss::new(clf, vec![img.clone()], 1.0, ConfidenceKind::Logits).unwrap();
        let x = 0.4f64.atanh() - 0.2f64.atanh();
        assert_relative_eq!(img.perturbed(&[x])[0], 0.2, max_relative = 1e-14);
        assert_relative_eq!(loss.value(&[x], 0).unwrap(), 0.01, max_relative = 1e-12);
    }

    #[test]
    fn probabilities_mode() {
        let img = AttackImage::from_centered(vec![0.3], 0).unwrap();
        let loss = AttackLoss::new(threshold_classifier(), vec![img], 1.0, ConfidenceKind::Probabilities).unwrap();
        let p0 = 1.0 / (1.0 + (-0.6f64).exp());
        assert_relative_eq!(loss.value(&[0.0], 0).unwrap(), 2.0 * p0 - 1.0, max_relative = 1e-12);
    }

    #[test]
    fn boundary_pixels() {
        assert!(AttackImage::from_centered(vec![0.5], 0).is_err());
        assert!(AttackImage::from_centered(vec![-0.5], 0).is_err());
        let img = AttackImage::from_unit_pixels(&[0.0, 1.0, 0.5], 0).unwrap();
        assert_eq!(img.pixels(), &[-PIXEL_CLAMP, PIXEL_CLAMP, 0.0]);
        assert!(img.perturbed(&[0.0; 3]).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn success_rate_tracks_prediction() {
        let imgs = vec![
            AttackImage::from_centered(vec![0.3], 0).unwrap(),
            AttackImage::from_centered(vec![-0.3], 0).unwrap(),
        ];
        let loss = AttackLoss::new(threshold_classifier(), imgs, 1.0, ConfidenceKind::Logits).unwrap();
        assert_eq!(loss.success_rate(&[0.0]), 0.5);
        assert!(loss.margin(&[0.0], 0) > 0.0);
        assert_eq!(loss.success_rate(&[-5.0]), 1.0);
    }

    #[test]
    fn rejects_bad_construction() {
        let img = AttackImage::from_centered(vec![0.1], 2).unwrap();
        assert!(AttackLoss::new(threshold_classifier(), vec![img.clone()], 1.0, ConfidenceKind::Logits).is_err());
        let img = AttackImage::from_centered(vec![0.1], 0).unwrap();
        assert!(AttackLoss::new(threshold_classifier(), vec![img], 0.0, ConfidenceKind::Logits).is_err());
        assert!(AttackLoss::new(threshold_classifier(), vec![], 1.0, ConfidenceKind::Logits).is_err());
    }

    proptest! {
        #[test]
        fn perturbed_stays_in_box_and_loss_nonnegative(
            z in prop::collection::vec(-0.49f64..0.49, 3),
            x in prop::collection::vec(-20.0f64..20.0, 3),
            label in 0usize..2,
        ) {
            let clf: Arc<dyn Classifier> = Arc::new(
                LinearClassifier::new(vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.0], vec![0.0, 0.1], 3).unwrap(),
            );
            let img = AttackImage::from_centered(z, label).unwrap();
            let adv = img.perturbed(&x);
            prop_assert!(adv.iter().all(|v| v.abs() <= 0.5));
            let loss = AttackLoss::new(clf, vec![img], 0.7, ConfidenceKind::Logits).unwrap();
            let v = loss.value(&x, 0).unwrap();
            prop_assert!(v >= 0.0);
            if loss.margin(&x, 0) <= 0.0 {
                let dist: f64 = adv.iter().zip(loss.images()[0].pixels()).map(|(a, b)| (a - b).powi(2)).sum();
                prop_assert!((v - 0.7 * dist).abs() <= 1e-12);
            }
        }
    }
}
