//! FedZO against first-order FedAvg on label-sharded Fashion-MNIST.
//!
//! Expects the four IDX files in `$FEDZO_DATA_DIR` (default
//! `data/fashion-mnist`). Takes a few minutes in release mode.
//!
//! cargo run --release --example softmax_fmnist [rounds]

use fedzo::harness::config::{Algorithm, ExperimentConfig, LossKind, ParticipationMode, StepSize};
use fedzo::harness::experiment::build_experiment;

fn main() -> fedzo::Result<()> {
    let rounds = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut base = ExperimentConfig::default();
    base.loss = LossKind::Softmax;
    base.devices = 50;
    base.rounds = rounds;
    base.participation.mode = ParticipationMode::Uniform;
    base.participation.m = 20;
    base.softmax.num_shards = 100;
    base.softmax.shards_per_device = 2;
    base.eval_stride = (rounds / 10).max(1);

    for (label, algorithm, h) in [("FedAvg", Algorithm::FedAvg, 5), ("FedZO", Algorithm::FedZo, 20)] {
        let mut cfg = base.clone();
        cfg.algorithm = algorithm;
        cfg.local_iters = h;
        cfg.eta = StepSize::Fixed(0.001);
        cfg.mu = StepSize::Fixed(0.001);
        let exp = build_experiment(&cfg)?;
        let state = exp.train()?;
        println!("{label} (H = {h})");
        for r in state.history.iter().filter(|r| r.loss.is_some()) {
            println!(
                "  t={:>4} loss {:.4} test acc {:.3}",
                r.t,
                r.loss.unwrap(),
                r.test_acc.unwrap()
            );
        }
        println!(
            "  final loss {:.4}, test acc {:.3}, {} value / {} gradient queries",
            state.final_eval.loss,
            state.final_eval.test_acc.unwrap(),
            state.stats.value_calls,
            state.stats.gradient_calls
        );
    }
    Ok(())
}
