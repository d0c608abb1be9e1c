//! Whole experiments built from configs, one per loss.

use std::path::Path;

use fedzo::data::{write_idx_images, write_idx_labels};
use fedzo::harness::config::{Algorithm, ExperimentConfig, ImageSource, LossKind, ParticipationMode, StepSize};
use fedzo::harness::experiment::{build_experiment, run_experiment};
use fedzo::Error;
use rand::{Rng, SeedableRng};

fn attack_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.loss = LossKind::Attack;
    c.devices = 5;
    c.rounds = 30;
    c.local_iters = 5;
    c.b1 = 5;
    c.b2 = 10;
    c.eta = StepSize::Fixed(0.01);
    c.mu = StepSize::Fixed(0.001);
    c.attack.images = 50;
    c.attack.pool = 500;
    c.attack.feature_dim = 16;
    c.attack.classifier_steps = 100;
    c
}

#[test]
fn attack_loss_decreases_without_gradients() {
    let out = run_experiment(&attack_config(), false).unwrap();
    let h = &out.state.history;
    let first = h[0].loss.unwrap();
    assert!(
        out.state.final_eval.loss < first,
        "{} !< {first}",
        out.state.final_eval.loss
    );
    assert!(h.iter().all(|r| r.grad_sq.is_none() && r.test_acc.is_none()));
    assert_eq!(out.state.stats.gradient_calls, 0);
    // x = 0 leaves every image untouched and correctly classified.
    assert!(first > 0.0);
}

#[test]
fn fedavg_is_rejected_for_the_attack_loss() {
    let mut c = attack_config();
    c.algorithm = Algorithm::FedAvg;
    let r = run_experiment(&c, false);
    assert!(matches!(r, Err(Error::InvalidConfig(_))), "{:?}", r.err());
}

/// Four-class toy "images": a bright block whose position is the label.
fn write_toy_idx(dir: &Path, prefix: &str, count: usize, seed: u64) {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (4, 4);
    let mut pixels = Vec::with_capacity(count * rows * cols);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = (i % 4) as u8;
        labels.push(label);
        for p in 0..rows * cols {
            let on = p / 4 == label as usize;
            let base: u8 = if on { 200 } else { 20 };
            pixels.push(base.saturating_add(rng.random_range(0..40)));
        }
    }
    write_idx_images(dir.join(format!("{prefix}-images-idx3-ubyte")), rows, cols, &pixels).unwrap();
    write_idx_labels(dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels).unwrap();
}

#[test]
fn softmax_on_idx_files_learns_and_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_idx(dir.path(), "train", 400, 1);
    write_toy_idx(dir.path(), "t10k", 100, 2);
    let mut c = ExperimentConfig::default();
    c.loss = LossKind::Softmax;
    c.devices = 4;
    c.rounds = 20;
    c.local_iters = 5;
    c.b1 = 10;
    c.b2 = 10;
    c.eta = StepSize::Fixed(0.05);
    c.participation.mode = ParticipationMode::Uniform;
    c.participation.m = 2;
    c.softmax.data_dir = Some(dir.path().to_path_buf());
    c.softmax.num_shards = 8;
    c.softmax.shards_per_device = 2;
    let out = run_experiment(&c, false).unwrap();
    let acc = out.state.final_eval.test_acc.unwrap();
    assert!(acc > 0.5, "test accuracy {acc}");
    assert!(out.state.history.iter().all(|r| r.cohort == 2));
    assert_eq!(out.sidecar.instance.dim, 16 * 4);
    assert_eq!(out.sidecar.instance.test_samples, Some(100));
}

#[test]
fn attack_can_use_idx_images() {
    let dir = tempfile::tempdir().unwrap();
    write_toy_idx(dir.path(), "train", 200, 3);
    let mut c = attack_config();
    c.attack.source = ImageSource::FashionMnist;
    c.attack.target_class = 2;
    c.softmax.data_dir = Some(dir.path().to_path_buf());
    c.softmax.train_subset = 0;
    let exp = build_experiment(&c).unwrap();
    assert_eq!(exp.info.dim, 16);
    let total: usize = exp.oracles.iter().map(|o| o.num_samples()).sum();
    assert_eq!(total, 50);
}
