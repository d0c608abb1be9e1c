//! Step-size caps, convergence schedules and local-iteration orders for the
//! three participation models.
//!
//! cargo run --example theory_bounds

use fedzo::theory::{
    check_cap, corollary_schedule, eta_cap_terms, max_local_iters, AssumptionConstants, CapInputs, Setting,
};

fn main() -> fedzo::Result<()> {
    let ac = AssumptionConstants {
        l: 1.0,
        c_g: 1.0,
        sigma_g_sq: 1.0,
        c_h: 0.5,
        sigma_h_sq: 1.0,
        f_star: 0.0,
    };
    let (d, b1, b2, n, t) = (1000, 5, 4, 50, 500);
    let settings = [
        Setting::full(d, b1, b2, n, 5),
        Setting::partial(d, b1, b2, n, 10, 5),
        Setting::aircomp(d, b1, b2, n, 26, 5, 0.64),
    ];
    for s in settings {
        let sched = corollary_schedule(&s, t)?;
        let ci = CapInputs::new(&ac, &s)?;
        let h_order = max_local_iters(s.variant, d, b1, b2, s.cohort, t)?;
        println!("{} (cohort {}, H = {}, T = {t})", s.variant, s.cohort, s.h);
        for term in eta_cap_terms(&ci) {
            println!("  {:<40} {:.4e}", term.expr, term.value);
        }
        let check = check_cap(&ci, sched.eta);
        println!(
            "  schedule eta {:.4e}, mu {:.4e}; cap {:.4e} via {}; within cap: {}",
            sched.eta, sched.mu, check.cap, check.binding, check.satisfied
        );
        println!(
            "  SNR condition met: {}; H order estimate {h_order}",
            sched.snr_sufficient
        );
    }
    Ok(())
}
