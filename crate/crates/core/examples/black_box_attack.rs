//! Federated black-box attack: devices share one perturbation that should
//! make a classifier mislabel their images, seeing only its outputs.
//!
//! cargo run --release --example black_box_attack

use std::sync::Arc;

use fedzo::data::make_synthetic_images;
use fedzo::estimator::EstimatorParams;
use fedzo::harness::experiment::fit_linear_classifier;
use fedzo::losses::{AttackImage, AttackLoss, Classifier, ConfidenceKind, LossOracle};
use fedzo::rng::{Purpose, SeedPath};
use fedzo::runtime::{run_training, DeviceAverage, TrainParams};
use fedzo::ModelVector;

fn main() -> fedzo::Result<()> {
    let (dim, classes, target) = (32, 5, 1);
    let mut rng = SeedPath::new(3, Purpose::Instance).stream();
    let pool = Arc::new(make_synthetic_images(1000, dim, classes, 0.15, &mut rng)?);
    let clf = fit_linear_classifier(Arc::clone(&pool), 200, 0.5)?;

    // Correctly classified images of the target class, dealt round-robin.
    let devices = 5;
    let mut per_device: Vec<Vec<AttackImage>> = vec![Vec::new(); devices];
    let mut k = 0;
    for i in 0..pool.len() {
        let px: Vec<f64> = pool.features(i).iter().map(|&p| f64::from(p)).collect();
        let img = AttackImage::from_unit_pixels(&px, pool.label(i))?;
        if pool.label(i) == target && clf.predict(img.pixels()) == target {
            per_device[k % devices].push(img);
            k += 1;
        }
    }
    println!("{k} correctly classified images of class {target}");

    let clf: Arc<dyn Classifier> = Arc::new(clf);
    let losses: Vec<Arc<AttackLoss>> = per_device
        .into_iter()
        .map(|imgs| AttackLoss::new(Arc::clone(&clf), imgs, 1.0, ConfidenceKind::Logits).map(Arc::new))
        .collect::<fedzo::Result<_>>()?;
    let oracles: Vec<Arc<dyn LossOracle>> = losses.iter().map(|l| Arc::clone(l) as Arc<dyn LossOracle>).collect();

    let params = TrainParams::zeroth_order(60, 10, 0.01, EstimatorParams::new(1e-3, 10, 10, dim)?).eval_stride(10);
    let state = run_training(
        &oracles,
        ModelVector::zeros(dim),
        &params,
        &DeviceAverage::new(oracles.clone()),
    )?;
    for r in state.history.iter().filter(|r| r.loss.is_some()) {
        println!("t={:>3} attack loss {:.4}", r.t, r.loss.unwrap());
    }
    let rate: f64 = losses.iter().map(|l| l.success_rate(&state.x)).sum::<f64>() / devices as f64;
    let dist: f64 = state.x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    println!(
        "final loss {:.4}, mean success rate {:.2}, max |x_j| {dist:.3}",
        state.final_eval.loss, rate
    );
    Ok(())
}
