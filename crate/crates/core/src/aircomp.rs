//! Over-the-air aggregation of model deltas across a fading channel.
//!
//! Scheduled devices (`|h_i| >= h_min`) pre-scale their delta with
//! `alpha_i = (h_min / h_i) sqrt(d P / delta_max)`, so every device arrives at
//! the server with the same positive real gain. The server receives the
//! superposition plus complex Gaussian noise and rescales by
//! `1 / (|M| h_min sqrt(d P / delta_max))`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{pairwise_sum, ModelVector};

/// How receiver noise reaches the real-valued model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Keep the real part of the complex noise: variance `sigma_w^2 / 2` per component.
    #[default]
    RealPart,
    /// Put the whole complex noise power on the real axis: variance `sigma_w^2`.
    FullComplex,
}

/// Transmit energy scale, receiver noise and scheduling threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// `P`; the energy budget per transmission is `d P`.
    pub power: f64,
    /// Receiver noise variance `sigma_w^2`. Zero gives a noiseless channel.
    pub sigma_w_sq: f64,
    /// Scheduling threshold on `|h_i|`. Zero schedules every device.
    pub h_min: f64,
    #[serde(default)]
    pub noise_mode: NoiseMode,
}

impl ChannelParams {
    pub fn new(power: f64, sigma_w_sq: f64, h_min: f64) -> Result<Self> {
        let cp = Self {
            power,
            sigma_w_sq,
            h_min,
            noise_mode: NoiseMode::RealPart,
        };
        cp.validate()?;
        Ok(cp)
    }

    /// Unit power with `sigma_w^2 = 10^(-snr_db / 10)`.
    pub fn from_snr_db(snr_db: f64, h_min: f64) -> Result<Self> {
        Self::new(1.0, 10f64.powf(-snr_db / 10.0), h_min)
    }

    pub fn with_noise_mode(mut self, mode: NoiseMode) -> Self {
        self.noise_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "channel power must be > 0, got {}",
                self.power
            )));
        }
        if !(self.sigma_w_sq >= 0.0 && self.sigma_w_sq.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be >= 0, got {}",
                self.sigma_w_sq
            )));
        }
        if !(self.h_min >= 0.0 && self.h_min.is_finite()) {
            return Err(Error::InvalidConfig(format!("h_min must be >= 0, got {}", self.h_min)));
        }
        Ok(())
    }

    /// `10 log10(P / sigma_w^2)`.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.sigma_w_sq).log10()
    }

    /// Minimum receive SNR `gamma = P h_min^2 / sigma_w^2`.
    pub fn gamma(&self) -> f64 {
        self.power * self.h_min * self.h_min / self.sigma_w_sq
    }

    /// Probability that a device with `h ~ CN(0, 1)` is scheduled: `exp(-h_min^2)`.
    pub fn inclusion_probability(&self) -> f64 {
        (-self.h_min * self.h_min).exp()
    }
}

/// Channel realisations for one round and the resulting schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    h: Vec<Complex64>,
    scheduled: Vec<usize>,
}

impl ChannelState {
    /// Build from known coefficients, scheduling by threshold.
    pub fn from_coefficients(h: Vec<Complex64>, h_min: f64) -> Self {
        let scheduled = h
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() >= h_min)
            .map(|(i, _)| i)
            .collect();
        Self { h, scheduled }
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.h
    }

    pub fn coefficient(&self, device: usize) -> Complex64 {
        self.h[device]
    }

    /// Scheduled device ids, ascending.
    pub fn scheduled(&self) -> &[usize] {
        &self.scheduled
    }
}

/// Draw `h_i ~ CN(0, 1)` for `n` devices and schedule those with `|h_i| >= h_min`.
pub fn draw_and_schedule<R: Rng + ?Sized>(n: usize, cp: &ChannelParams, rng: &mut R) -> ChannelState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let h = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(s * re, s * im)
        })
        .collect();
    ChannelState::from_coefficients(h, cp.h_min)
}

/// Precoder `alpha = (h_min / h) sqrt(d P / delta_max)`.
///
/// Returns `None` when `delta_max == 0`: there is nothing to send.
pub fn transmit_scalar(h: Complex64, cp: &ChannelParams, d: usize, delta_max: f64) -> Result<Option<Complex64>> {
    if h.norm() < cp.h_min {
        return Err(Error::ContractViolation(format!(
            "|h| = {} is below the threshold {}",
            h.norm(),
            cp.h_min
        )));
    }
    precoder(h, cp.h_min, d as f64 * cp.power, delta_max)
}

fn precoder(h: Complex64, alignment: f64, budget: f64, delta_max: f64) -> Result<Option<Complex64>> {
    if !(delta_max >= 0.0 && delta_max.is_finite()) {
        return Err(Error::ContractViolation(format!(
            "delta_max must be finite and >= 0, got {delta_max}"
        )));
    }
    if delta_max == 0.0 {
        return Ok(None);
    }
    if h.norm() == 0.0 {
        return Err(Error::ContractViolation("cannot invert a zero channel".into()));
    }
    Ok(Some(alignment / h * (budget / delta_max).sqrt()))
}

/// What happened during one over-the-air aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirCompRecord {
    /// `max_i |Delta_i|^2` over the cohort.
    pub delta_max: f64,
    pub cohort: usize,
    /// Common receive gain `h_i alpha_i / sqrt(d P / delta_max)`: `h_min`, or
    /// `min_i |h_i|` when `h_min = 0`.
    pub alignment: f64,
    /// Variance of the noise left in the aggregate, per real component.
    pub effective_noise_var: f64,
    /// Euclidean norm of the noise actually added to the aggregate.
    pub noise_norm: f64,
    /// `max_i |alpha_i|^2 |Delta_i|^2 / (d P)`; at most 1 up to rounding.
    pub max_energy_ratio: f64,
    /// Transmissions whose energy exceeded `d P` beyond rounding slack.
    pub energy_violations: usize,
    /// `true` when every delta was zero and nothing was sent.
    pub skipped_transmission: bool,
}

/// Aggregate `deltas` (device id, delta) over the channel in `cs`.
///
/// The ids must be exactly `cs.scheduled()`. Returns the noisy estimate of the
/// mean delta and a record of the transmission.
pub fn aircomp_aggregate<R: Rng + ?Sized>(
    deltas: &[(usize, ModelVector)],
    cs: &ChannelState,
    cp: &ChannelParams,
    round: usize,
    rng: &mut R,
) -> Result<(ModelVector, AirCompRecord)> {
    if deltas.is_empty() {
        return Err(Error::EmptyCohort { round });
    }
    let mut sorted: Vec<&(usize, ModelVector)> = deltas.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);
    let ids: Vec<usize> = sorted.iter().map(|(id, _)| *id).collect();
    if ids != cs.scheduled() {
        return Err(Error::ContractViolation(format!(
            "deltas from {ids:?} do not match the scheduled set {:?}",
            cs.scheduled()
        )));
    }
    let d = sorted[0].1.dim();
    if sorted.iter().any(|(_, v)| v.dim() != d) {
        return Err(Error::ContractViolation("deltas have different dimensions".into()));
    }
    let m = sorted.len();
    let delta_max = sorted.iter().map(|(_, v)| v.norm_sq()).fold(0.0, f64::max);
    let alignment = if cp.h_min > 0.0 {
        cp.h_min
    } else {
        ids.iter()
            .map(|&i| cs.coefficient(i).norm())
            .fold(f64::INFINITY, f64::min)
    };
    let mut record = AirCompRecord {
        delta_max,
        cohort: m,
        alignment,
        effective_noise_var: 0.0,
        noise_norm: 0.0,
        max_energy_ratio: 0.0,
        energy_violations: 0,
        skipped_transmission: delta_max == 0.0,
    };
    if delta_max == 0.0 {
        return Ok((ModelVector::zeros(d), record));
    }
    if !delta_max.is_finite() {
        return Err(Error::ContractViolation("non-finite delta in the cohort".into()));
    }

    let budget = d as f64 * cp.power;
    let mut received = Vec::with_capacity(m);
    for (id, delta) in &sorted {
        let h = cs.coefficient(*id);
        let alpha = precoder(h, alignment, budget, delta_max)?.expect("delta_max > 0");
        let ratio = alpha.norm_sqr() * delta.norm_sq() / budget;
        record.max_energy_ratio = record.max_energy_ratio.max(ratio);
        if ratio > 1.0 + 4.0 * f64::EPSILON {
            record.energy_violations += 1;
        }
        // Only the real part of the received superposition carries the model.
        let gain = (h * alpha).re;
        received.push(delta.iter().map(|v| gain * v).collect::<Vec<f64>>());
    }
    let refs: Vec<&[f64]> = received.iter().map(Vec::as_slice).collect();
    let mut y = pairwise_sum(&refs);

    let receiver_scale = 1.0 / (m as f64 * alignment * (budget / delta_max).sqrt());
    let noise_std = match cp.noise_mode {
        NoiseMode::RealPart => (cp.sigma_w_sq / 2.0).sqrt(),
        NoiseMode::FullComplex => cp.sigma_w_sq.sqrt(),
    };
    let mut noise_sq = 0.0;
    for v in y.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        let n = receiver_scale * noise_std * z;
        noise_sq += n * n;
        *v = receiver_scale * *v + n;
    }
    record.noise_norm = noise_sq.sqrt();
    record.effective_noise_var = (receiver_scale * noise_std).powi(2);
    Ok((ModelVector::from(y), record))
}

/// Per-component noise variance left after aggregation:
/// `sigma_w^2 delta_max / (2 |M|^2 d P h_min^2)` in real-part mode.
pub fn effective_noise_variance(cp: &ChannelParams, cohort: usize, d: usize, delta_max: f64) -> f64 {
    let scale = match cp.noise_mode {
        NoiseMode::RealPart => 2.0,
        NoiseMode::FullComplex => 1.0,
    };
    let m = cohort as f64;
    cp.sigma_w_sq * delta_max / (scale * m * m * d as f64 * cp.power * cp.h_min * cp.h_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, SeedPath};
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> crate::rng::RngStream {
        SeedPath::new(seed, Purpose::Channel).stream()
    }

    #[test]
    fn precoder_hand_values() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let a = transmit_scalar(Complex64::new(0.8, 0.0), &cp, 4, 1.0).unwrap().unwrap();
        assert_relative_eq!(a.re, 2.0, max_relative = 1e-15);
        assert_eq!(a.im, 0.0);
        assert_relative_eq!(a.norm_sqr() * 1.0, 4.0, max_relative = 1e-15);

        let h = Complex64::new(0.0, 0.8);
        let a = transmit_scalar(h, &cp, 4, 1.0).unwrap().unwrap();
        assert_relative_eq!(a.im, -2.0, max_relative = 1e-15);
        assert!(a.re.abs() < 1e-15);
        let p = h * a;
        assert_relative_eq!(p.re, 1.6, max_relative = 1e-15);
        assert!(p.im.abs() < 1e-15);

        let quarter = transmit_scalar(Complex64::new(0.8, 0.0), &cp, 4, 4.0).unwrap().unwrap();
        assert_relative_eq!(quarter.re, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn precoder_edge_cases() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        assert_eq!(transmit_scalar(Complex64::new(1.0, 0.0), &cp, 4, 0.0).unwrap(), None);
        assert!(matches!(
            transmit_scalar(Complex64::new(0.5, 0.0), &cp, 4, 1.0),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn snr_conventions() {
        let cp = ChannelParams::from_snr_db(-10.0, 0.8).unwrap();
        assert_relative_eq!(cp.sigma_w_sq, 10.0, max_relative = 1e-15);
        assert_relative_eq!(cp.snr_db(), -10.0, max_relative = 1e-12);
        assert_relative_eq!(cp.gamma(), 0.064, max_relative = 1e-12);
        assert_relative_eq!(cp.inclusion_probability(), 0.527292, epsilon = 1e-6);
        assert!(ChannelParams::new(0.0, 1.0, 0.8).is_err());
        assert!(ChannelParams::new(1.0, -1.0, 0.8).is_err());
    }

    #[test]
    fn zero_threshold_schedules_everyone() {
        let cp = ChannelParams::new(1.0, 1.0, 0.0).unwrap();
        let cs = draw_and_schedule(17, &cp, &mut rng(1));
        assert_eq!(cs.scheduled(), (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_is_exactly_the_exceeders() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let cs = draw_and_schedule(200, &cp, &mut rng(2));
        for (i, h) in cs.coefficients().iter().enumerate() {
            assert_eq!(cs.scheduled().contains(&i), h.norm() >= 0.8);
        }
        assert_eq!(cs, draw_and_schedule(200, &cp, &mut rng(2)));
    }

    #[test]
    fn inclusion_rate_matches_rayleigh_tail() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let mut r = rng(3);
        let mut hits = 0usize;
        let draws = 1_000_000;
        for _ in 0..draws / 1000 {
            hits += draw_and_schedule(1000, &cp, &mut r).scheduled().len();
        }
        let freq = hits as f64 / draws as f64;
        assert!((freq - (-0.64f64).exp()).abs() <= 0.002, "{freq}");
    }

    fn two_device_state() -> ChannelState {
        ChannelState::from_coefficients(vec![Complex64::new(0.6, 0.7), Complex64::new(-0.9, 0.3)], 0.8)
    }

    #[test]
    fn noiseless_channel_gives_the_mean() {
        let cp = ChannelParams::new(1.0, 0.0, 0.8).unwrap();
        let deltas = vec![
            (1, ModelVector::from(vec![0.5, -1.0])),
            (0, ModelVector::from(vec![0.25, 3.0])),
        ];
        let (y, rec) = aircomp_aggregate(&deltas, &two_device_state(), &cp, 0, &mut rng(4)).unwrap();
        assert_relative_eq!(y[0], 0.375, max_relative = 1e-12);
        assert_relative_eq!(y[1], 1.0, max_relative = 1e-12);
        assert_eq!(rec.energy_violations, 0);
        assert_eq!(rec.noise_norm, 0.0);
        assert_relative_eq!(rec.delta_max, 9.0625);
    }

    #[test]
    fn zero_deltas_skip_transmission() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let deltas = vec![(0, ModelVector::zeros(3)), (1, ModelVector::zeros(3))];
        let (y, rec) = aircomp_aggregate(&deltas, &two_device_state(), &cp, 0, &mut rng(5)).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
        assert!(rec.skipped_transmission);
        assert_eq!(rec.noise_norm, 0.0);
    }

    #[test]
    fn cohort_mismatch_and_empty() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let only_one = vec![(0, ModelVector::from(vec![1.0]))];
        assert!(matches!(
            aircomp_aggregate(&only_one, &two_device_state(), &cp, 0, &mut rng(6)),
            Err(Error::ContractViolation(_))
        ));
        assert!(matches!(
            aircomp_aggregate(&[], &two_device_state(), &cp, 7, &mut rng(6)),
            Err(Error::EmptyCohort { round: 7 })
        ));
    }

    #[test]
    fn energy_is_tight_for_the_largest_delta() {
        let cp = ChannelParams::new(2.0, 1.0, 0.8).unwrap();
        let deltas = vec![
            (0, ModelVector::from(vec![3.0, 4.0])),
            (1, ModelVector::from(vec![1.0, 0.0])),
        ];
        let (_, rec) = aircomp_aggregate(&deltas, &two_device_state(), &cp, 0, &mut rng(7)).unwrap();
        // The budget is met with equality only when |h| = h_min; device 0 has |h|^2 = 0.85.
        assert_relative_eq!(rec.max_energy_ratio, 0.64 / 0.85, max_relative = 1e-14);
        let at_threshold =
            ChannelState::from_coefficients(vec![Complex64::new(0.0, 0.8), Complex64::new(1.0, 0.0)], 0.8);
        let (_, rec) = aircomp_aggregate(&deltas, &at_threshold, &cp, 0, &mut rng(7)).unwrap();
        assert_relative_eq!(rec.max_energy_ratio, 1.0, max_relative = 1e-14);
        assert_eq!(rec.energy_violations, 0);
    }

    #[test]
    fn variance_law_worked_example() {
        // Two devices, delta_max = 1, d = 4, P = 1, h_min = 0.8: variance 1 / 20.48.
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let expected = effective_noise_variance(&cp, 2, 4, 1.0);
        assert_relative_eq!(expected, 1.0 / 20.48, max_relative = 1e-15);
        let deltas = vec![
            (0, ModelVector::from(vec![1.0, 0.0, 0.0, 0.0])),
            (1, ModelVector::zeros(4)),
        ];
        let cs = two_device_state();
        let mut r = rng(8);
        let reps = 20_000;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let (y, rec) = aircomp_aggregate(&deltas, &cs, &cp, 0, &mut r).unwrap();
            assert_relative_eq!(rec.effective_noise_var, expected, max_relative = 1e-12);
            let ideal = [0.5, 0.0, 0.0, 0.0];
            sum_sq += y.iter().zip(ideal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let empirical = sum_sq / (4 * reps) as f64;
        assert!((empirical / expected - 1.0).abs() < 0.03, "{empirical} vs {expected}");
    }

    #[test]
    fn full_complex_mode_doubles_variance() {
        let cp = ChannelParams::new(1.0, 1.0, 0.8).unwrap();
        let full = cp.with_noise_mode(NoiseMode::FullComplex);
        assert_relative_eq!(
            effective_noise_variance(&full, 3, 5, 2.0),
            2.0 * effective_noise_variance(&cp, 3, 5, 2.0),
            max_relative = 1e-15
        );
    }
}
