//! Theoretical quantities: derived constants, learning-rate caps, optimality
//! gap bounds, step-size schedules and local-iteration caps.
//!
//! Everything here is a pure function of its inputs. Caps and bounds are
//! reported term by term so callers can see which constraint binds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smoothness, gradient-moment and dissimilarity constants of a problem.
///
/// * `E|grad F_i(x, xi)|^2 <= c_g |grad f_i(x)|^2 + sigma_g_sq`
/// * `|grad f(x) - grad f_i(x)|^2 <= c_h |grad f(x)|^2 + sigma_h_sq`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub l: f64,
    pub c_g: f64,
    pub sigma_g_sq: f64,
    pub c_h: f64,
    pub sigma_h_sq: f64,
    pub f_star: f64,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l > 0.0
            && self.l.is_finite()
            && self.c_g >= 1.0
            && self.c_g.is_finite()
            && self.sigma_g_sq >= 0.0
            && self.sigma_g_sq.is_finite()
            && self.c_h >= 0.0
            && self.c_h.is_finite()
            && self.sigma_h_sq >= 0.0
            && self.sigma_h_sq.is_finite()
            && self.f_star.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "assumption constants out of range (need L > 0, c_g >= 1, c_h >= 0, finite variances): {self:?}"
            )))
        }
    }
}

/// Which participation model a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Every device trains every round; the cohort is `N`.
    Full,
    /// `M` devices sampled uniformly per round.
    Partial,
    /// Threshold-scheduled cohort over a noisy channel; the cohort is the
    /// smallest cohort size seen, `M~`.
    AirComp,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::Partial => "partial",
            Variant::AirComp => "aircomp",
        })
    }
}

/// Problem sizes shared by all theory functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub variant: Variant,
    pub d: usize,
    pub b1: usize,
    pub b2: usize,
    /// Total devices `N`.
    pub n: usize,
    /// `N`, `M` or `M~` depending on the variant.
    pub cohort: usize,
    /// Local iterations `H`.
    pub h: usize,
    /// Minimum receive SNR `gamma`; infinite outside AirComp.
    pub gamma: f64,
}

impl Setting {
    pub fn full(d: usize, b1: usize, b2: usize, n: usize, h: usize) -> Self {
        Self {
            variant: Variant::Full,
            d,
            b1,
            b2,
            n,
            cohort: n,
            h,
            gamma: f64::INFINITY,
        }
    }

    pub fn partial(d: usize, b1: usize, b2: usize, n: usize, m: usize, h: usize) -> Self {
        Self {
            variant: Variant::Partial,
            d,
            b1,
            b2,
            n,
            cohort: m,
            h,
            gamma: f64::INFINITY,
        }
    }

    pub fn aircomp(d: usize, b1: usize, b2: usize, n: usize, m_tilde: usize, h: usize, gamma: f64) -> Self {
        Self {
            variant: Variant::AirComp,
            d,
            b1,
            b2,
            n,
            cohort: m_tilde,
            h,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.b1 == 0 || self.b2 == 0 || self.n == 0 || self.h == 0 || self.cohort == 0 {
            return Err(Error::InvalidParams(format!("all sizes must be positive: {self:?}")));
        }
        if self.cohort > self.n {
            return Err(Error::InvalidParams(format!(
                "cohort {} exceeds N = {}",
                self.cohort, self.n
            )));
        }
        if self.variant == Variant::Full && self.cohort != self.n {
            return Err(Error::InvalidParams("full participation needs cohort = N".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParams(format!(
                "SNR gamma must be > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    fn batch(&self) -> f64 {
        (self.b1 * self.b2) as f64
    }
}

/// Constants derived from the assumptions and the setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    /// `1 + c_g d / (b1 b2)`
    pub c_g_tilde: f64,
    /// `1 + c_h`
    pub c_h_tilde: f64,
    /// `3 (1 + c_g d / (b1 b2)) sigma_h^2 + d sigma_g^2 / (b1 b2)`
    pub sigma_tilde_sq: f64,
    /// `1 + N H / (8 M~ gamma)`; exactly 1 when `gamma` is infinite.
    pub c_hat: f64,
}

pub fn derived_constants(ac: &AssumptionConstants, s: &Setting) -> Result<DerivedConstants> {
    ac.validate()?;
    s.validate()?;
    let ratio = ac.c_g * s.d as f64 / s.batch();
    let c_hat = 1.0 + (s.n * s.h) as f64 / (8.0 * s.cohort as f64 * s.gamma);
    Ok(DerivedConstants {
        c_g_tilde: 1.0 + ratio,
        c_h_tilde: 1.0 + ac.c_h,
        sigma_tilde_sq: 3.0 * (1.0 + ratio) * ac.sigma_h_sq + s.d as f64 * ac.sigma_g_sq / s.batch(),
        c_hat,
    })
}

/// Everything a learning-rate cap depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapInputs {
    pub variant: Variant,
    pub c_g_tilde: f64,
    pub c_h_tilde: f64,
    pub c_h: f64,
    pub l: f64,
    pub n: usize,
    pub cohort: usize,
    pub h: usize,
    pub gamma: f64,
}

impl CapInputs {
    pub fn new(ac: &AssumptionConstants, s: &Setting) -> Result<Self> {
        let dc = derived_constants(ac, s)?;
        Ok(Self {
            variant: s.variant,
            c_g_tilde: dc.c_g_tilde,
            c_h_tilde: dc.c_h_tilde,
            c_h: ac.c_h,
            l: ac.l,
            n: s.n,
            cohort: s.cohort,
            h: s.h,
            gamma: s.gamma,
        })
    }
}

/// One constraint on the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapTerm {
    pub expr: String,
    pub value: f64,
}

fn term(expr: &str, value: f64) -> CapTerm {
    CapTerm {
        expr: expr.to_owned(),
        value,
    }
}

/// Every term of the learning-rate condition for the variant, in order.
/// Terms that divide by zero (e.g. `c_h = 0`) are `+inf`.
pub fn eta_cap_terms(ci: &CapInputs) -> Vec<CapTerm> {
    let (cg, ch, l, g) = (ci.c_g_tilde, ci.c_h_tilde, ci.l, ci.gamma);
    let n = ci.n as f64;
    let m = ci.cohort as f64;
    let h = ci.h as f64;
    let h3 = h * h * h;
    match ci.variant {
        Variant::Full => vec![
            term("N/(72 cg~ ch~ L)", n / (72.0 * cg * ch * l)),
            term("2/(N H^2 L)", 2.0 / (n * h * h * l)),
            term("1/(3 sqrt(cg~) H L)", 1.0 / (3.0 * cg.sqrt() * h * l)),
        ],
        Variant::Partial => vec![
            term("M/(192 cg~ ch~ L)", m / (192.0 * cg * ch * l)),
            term("M/(72 c_h H L)", m / (72.0 * ci.c_h * h * l)),
            term("2/(M H^2 L)", 2.0 / (m * h * h * l)),
            term("1/(3 sqrt(cg~) H L)", 1.0 / (3.0 * cg.sqrt() * h * l)),
            term("1/(3 sqrt(M H^3) L)", 1.0 / (3.0 * (m * h3).sqrt() * l)),
        ],
        Variant::AirComp => vec![
            term("M~/(288 cg~ ch~ L)", m / (288.0 * cg * ch * l)),
            term("M~/(108 c_h H L)", m / (108.0 * ci.c_h * h * l)),
            term("3/(2 N H^2 L)", 3.0 / (2.0 * n * h * h * l)),
            term("1/(3 sqrt(cg~) H L)", 1.0 / (3.0 * cg.sqrt() * h * l)),
            term("1/(2 sqrt(3 N H^3) L)", 1.0 / (2.0 * (3.0 * n * h3).sqrt() * l)),
            term(
                "sqrt(M~ gamma)/(L sqrt(2 cg~ N H^3))",
                (m * g).sqrt() / (l * (2.0 * cg * n * h3).sqrt()),
            ),
            term(
                "M~^2 gamma/(36 cg~ ch~ N H L)",
                m * m * g / (36.0 * cg * ch * n * h * l),
            ),
        ],
    }
}

/// Largest admissible learning rate: the minimum over [`eta_cap_terms`].
pub fn eta_cap(ci: &CapInputs) -> f64 {
    eta_cap_terms(ci).iter().map(|t| t.value).fold(f64::INFINITY, f64::min)
}

/// Right-hand side of the optimality-gap bound, split into its terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `4 (f(x^0) - f*) / (H T eta)`
    pub initial_gap: f64,
    /// Terms proportional to `eta` (estimator variance and device sampling).
    pub variance: f64,
    /// Terms proportional to `mu^2`.
    pub smoothing: f64,
    pub total: f64,
}

/// Bound on `min_t E|grad f(x^t)|^2` after `t_rounds` rounds.
pub fn bound_rhs(
    ac: &AssumptionConstants,
    s: &Setting,
    eta: f64,
    mu: f64,
    t_rounds: usize,
    f0: f64,
) -> Result<BoundReport> {
    let dc = derived_constants(ac, s)?;
    if !(eta > 0.0 && mu > 0.0) || t_rounds == 0 {
        return Err(Error::InvalidParams("bound needs eta > 0, mu > 0, T >= 1".into()));
    }
    let l = ac.l;
    let h = s.h as f64;
    let c = s.cohort as f64;
    let d = s.d as f64;
    let mu2 = l * l * mu * mu;
    let initial_gap = 4.0 * (f0 - ac.f_star) / (h * t_rounds as f64 * eta);
    let (variance, smoothing) = match s.variant {
        Variant::Full => (eta * 24.0 * l * dc.sigma_tilde_sq / c, d * mu2 / 12.0 + 5.0 * mu2),
        Variant::Partial => (
            eta * 32.0 * l * dc.sigma_tilde_sq / c + eta * 36.0 * h * l * ac.sigma_h_sq / c,
            d * mu2 / 24.0 + 13.0 * mu2,
        ),
        Variant::AirComp => (
            eta * 32.0 * l * dc.c_hat * dc.sigma_tilde_sq / c + eta * 36.0 * h * l * ac.sigma_h_sq / c,
            dc.c_hat * d * mu2 / 36.0 + (12.0 + dc.c_hat / 9.0) * mu2,
        ),
    };
    Ok(BoundReport {
        initial_gap,
        variance,
        smoothing,
        total: initial_gap + variance + smoothing,
    })
}

/// Learning rate and smoothing step prescribed for a round budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eta: f64,
    pub mu: f64,
    /// `b1 b2 <= d`, the regime the schedule is stated for.
    pub in_regime: bool,
    /// `8 M~ gamma >= N H`; only meaningful for AirComp, `true` otherwise.
    pub snr_sufficient: bool,
}

/// `eta = (C b1 b2)^{1/2} (d H T)^{-1/2}` and `mu = (d b1 b2 C H T)^{-1/4}`
/// with `C` the cohort of the variant. Out-of-regime inputs are still evaluated.
pub fn corollary_schedule(s: &Setting, t_rounds: usize) -> Result<Schedule> {
    s.validate()?;
    if t_rounds == 0 {
        return Err(Error::InvalidParams("T must be >= 1".into()));
    }
    let c = s.cohort as f64;
    let bb = s.batch();
    let d = s.d as f64;
    let ht = s.h as f64 * t_rounds as f64;
    let snr_sufficient = match s.variant {
        Variant::AirComp => 8.0 * c * s.gamma >= (s.n * s.h) as f64,
        _ => true,
    };
    Ok(Schedule {
        eta: (c * bb).sqrt() / (d * ht).sqrt(),
        mu: (d * bb * c * ht).powf(-0.25),
        in_regime: s.b1 * s.b2 <= s.d,
        snr_sufficient,
    })
}

/// Cap check for a schedule ("T large enough").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapCheck {
    pub cap: f64,
    pub binding: String,
    pub satisfied: bool,
}

pub fn check_cap(ci: &CapInputs, eta: f64) -> CapCheck {
    let terms = eta_cap_terms(ci);
    let binding = terms
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .map(|t| t.expr.clone())
        .unwrap_or_default();
    let cap = eta_cap(ci);
    CapCheck {
        cap,
        binding,
        satisfied: eta <= cap,
    }
}

/// Order estimate of the largest useful `H`, with all hidden constants set to 1.
///
/// Full: `min{(dT)^{1/3} (b1 b2)^{-1/3} / N, T / N}`; partial adds `d / (b1 b2)`.
/// AirComp uses the partial expression with `M~`. Never below 1.
pub fn max_local_iters(
    variant: Variant,
    d: usize,
    b1: usize,
    b2: usize,
    cohort: usize,
    t_rounds: usize,
) -> Result<usize> {
    if d == 0 || b1 == 0 || b2 == 0 || cohort == 0 || t_rounds == 0 {
        return Err(Error::InvalidParams("max_local_iters needs positive inputs".into()));
    }
    let (d, bb, c, t) = (d as u128, (b1 * b2) as u128, cohort as u128, t_rounds as u128);
    // Largest k with k^3 c^3 bb <= d t, computed exactly in integers.
    let target = d * t;
    let approx = ((target as f64 / bb as f64).cbrt() / c as f64).floor() as u128;
    let fits = |k: u128| {
        k.checked_pow(3)
            .and_then(|k3| k3.checked_mul(c * c * c * bb))
            .is_some_and(|v| v <= target)
    };
    let mut k = approx;
    while k > 0 && !fits(k) {
        k -= 1;
    }
    while fits(k + 1) {
        k += 1;
    }
    let mut cap = k.min(t / c);
    if variant != Variant::Full {
        cap = cap.min(d / bb);
    }
    Ok(cap.max(1).min(usize::MAX as u128) as usize)
}
