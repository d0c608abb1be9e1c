//! The mini-batch two-point estimator on a quadratic: its mean tracks the
//! true gradient and its spread shrinks as the batch grows.
//!
//! cargo run --release --example estimator

use fedzo::estimator::{minibatch_estimator, EstimatorParams};
use fedzo::losses::QuadraticDeviceLoss;
use fedzo::rng::{Purpose, SeedPath};

fn main() -> fedzo::Result<()> {
    let d = 8;
    let mut rng = SeedPath::new(7, Purpose::Instance).stream();
    let oracle = QuadraticDeviceLoss::isotropic(d, 2.0).with_sample_noise(0.5, 20, &mut rng)?;
    let x: Vec<f64> = (0..d).map(|i| 1.0 - 0.25 * i as f64).collect();
    let grad = oracle.gradient(&x);
    println!("true gradient      {:>8.3?}", &grad[..4]);

    for (b1, b2) in [(1, 1), (5, 4), (25, 20)] {
        let params = EstimatorParams::new(1e-3, b1, b2, d)?;
        let calls = 2000;
        let mut mean = vec![0.0; d];
        let mut err_sq = 0.0;
        for _ in 0..calls {
            let g = minibatch_estimator(&oracle, &x, &params, &mut rng)?;
            for (m, gi) in mean.iter_mut().zip(g.iter()) {
                *m += gi / calls as f64;
            }
            err_sq += g.iter().zip(grad.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / calls as f64;
        }
        println!(
            "b1={b1:<2} b2={b2:<2} mean {:>8.3?}  E|g - grad|^2 = {err_sq:8.3}  ({} value calls per estimate)",
            &mean[..4],
            params.value_calls()
        );
    }
    Ok(())
}
