//! FedZO with full participation on a heterogeneous quadratic federation,
//! using the step sizes from the convergence schedule.
//!
//! cargo run --release --example quadratic_fedzo

use fedzo::harness::config::{ExperimentConfig, StepSize};
use fedzo::harness::experiment::build_experiment;

fn main() -> fedzo::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.devices = 10;
    cfg.rounds = 200;
    cfg.local_iters = 10;
    cfg.b1 = 5;
    cfg.b2 = 4;
    cfg.eta = StepSize::Corollary;
    cfg.mu = StepSize::Corollary;
    cfg.eval_stride = 20;
    cfg.quadratic.dim = 20;
    cfg.quadratic.heterogeneity = 0.1;

    let exp = build_experiment(&cfg)?;
    let f_star = exp.constants.map(|c| c.f_star).unwrap_or(0.0);
    println!("eta = {:.4}, mu = {:.4}", exp.steps.eta, exp.steps.mu);
    let state = exp.train()?;
    println!("{:>5} {:>12} {:>12}", "t", "f - f*", "|grad f|^2");
    for r in state.history.iter().filter(|r| r.loss.is_some()) {
        println!(
            "{:>5} {:>12.4e} {:>12.4e}",
            r.t,
            r.loss.unwrap() - f_star,
            r.grad_sq.unwrap()
        );
    }
    println!(
        "final {:>6.4e}; {} value queries, {} gradient queries",
        state.final_eval.loss - f_star,
        state.stats.value_calls,
        state.stats.gradient_calls
    );

    let theory = exp.theory()?;
    if let Some(cap) = theory.cap_check {
        println!(
            "eta cap {:.4e} ({}), satisfied: {}",
            cap.cap, cap.binding, cap.satisfied
        );
    }
    Ok(())
}
