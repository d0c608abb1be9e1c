//! Over-the-air aggregation across SNRs, next to the noise-free channel.
//! Noise is scaled by the largest local update, so it fades as training
//! settles.
//!
//! cargo run --release --example aircomp_snr

use fedzo::harness::config::{ExperimentConfig, ParticipationMode, StepSize};
use fedzo::harness::experiment::build_experiment;

fn main() -> fedzo::Result<()> {
    for snr in [Some(-10.0), Some(-5.0), Some(0.0), Some(10.0), None] {
        let mut cfg = ExperimentConfig::default();
        cfg.devices = 50;
        cfg.rounds = 100;
        cfg.local_iters = 10;
        cfg.b1 = 5;
        cfg.b2 = 4;
        cfg.eta = StepSize::Fixed(0.02);
        cfg.eval_stride = 1000;
        cfg.quadratic.heterogeneity = 0.1;
        cfg.participation.mode = ParticipationMode::AirComp;
        cfg.channel.h_min = 0.8;
        match snr {
            Some(db) => cfg.channel.snr_db = db,
            None => cfg.channel.sigma_w_sq = Some(0.0),
        }
        let exp = build_experiment(&cfg)?;
        let f_star = exp.constants.map(|c| c.f_star).unwrap_or(0.0);
        let state = exp.train()?;
        let noise: f64 = state.history.iter().filter_map(|r| r.noise_var).sum::<f64>() / state.history.len() as f64;
        let label = snr.map_or("noise-free".to_string(), |db| format!("{db:>5} dB"));
        println!(
            "{label:>10}: f(x^T) - f* = {:.4e}, mean noise variance {noise:.3e}, smallest cohort {}",
            state.final_eval.loss - f_star,
            state.stats.min_cohort
        );
    }
    Ok(())
}
