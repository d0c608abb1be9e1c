//! Uniform device sampling: more devices per round give a better final loss.
//!
//! cargo run --release --example partial_participation

use fedzo::harness::config::{ExperimentConfig, ParticipationMode, StepSize};
use fedzo::harness::experiment::build_experiment;

fn main() -> fedzo::Result<()> {
    for m in [5, 10, 25, 50] {
        let mut cfg = ExperimentConfig::default();
        cfg.devices = 50;
        cfg.rounds = 100;
        cfg.local_iters = 10;
        cfg.b1 = 5;
        cfg.b2 = 4;
        cfg.eta = StepSize::Fixed(0.02);
        cfg.eval_stride = 1000;
        cfg.quadratic.heterogeneity = 0.1;
        cfg.participation.mode = ParticipationMode::Uniform;
        cfg.participation.m = m;
        let exp = build_experiment(&cfg)?;
        let f_star = exp.constants.map(|c| c.f_star).unwrap_or(0.0);
        let state = exp.train()?;
        println!("M = {m:>2}: f(x^T) - f* = {:.4e}", state.final_eval.loss - f_star);
    }
    Ok(())
}
