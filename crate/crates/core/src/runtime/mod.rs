//! The federated training loop.
//!
//! Each round the server picks a cohort (uniformly, or by channel threshold),
//! every cohort device runs `H` local steps from the current global model, and
//! the server adds the (possibly noisy) mean delta to the model.

mod local;

pub use local::{fedavg_local_update, local_update, local_update_with, LocalRunResult, StreamKey};

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aircomp::{aircomp_aggregate, draw_and_schedule, ChannelParams};
use crate::error::{Error, Result};
use crate::estimator::EstimatorParams;
use crate::losses::{CallCounts, CountingOracle, LossOracle};
use crate::rng::{Purpose, SeedPath};
use crate::vector::{pairwise_sum, ModelVector};

/// `m` distinct device ids out of `0..n`, uniform over subsets, ascending.
pub fn sample_devices<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidConfig(format!(
            "cannot sample M = {m} of N = {n} devices"
        )));
    }
    let mut ids = rand::seq::index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Mean of `(device, delta)` pairs, summed pairwise in ascending device order.
pub fn ideal_aggregate(deltas: &[(usize, ModelVector)], round: usize) -> Result<ModelVector> {
    if deltas.is_empty() {
        return Err(Error::EmptyCohort { round });
    }
    let mut sorted: Vec<&(usize, ModelVector)> = deltas.iter().collect();
    sorted.sort_by_key(|(id, _)| *id);
    let d = sorted[0].1.dim();
    if sorted.iter().any(|(_, v)| v.dim() != d) {
        return Err(Error::ContractViolation("deltas have different dimensions".into()));
    }
    let refs: Vec<&[f64]> = sorted.iter().map(|(_, v)| v.as_ref()).collect();
    let inv = 1.0 / sorted.len() as f64;
    Ok(pairwise_sum(&refs).into_iter().map(|v| v * inv).collect())
}

/// How the cohort is chosen and how its deltas reach the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Participation {
    /// Every device, noise-free aggregation.
    Full,
    /// `m` devices sampled uniformly each round, noise-free aggregation.
    Uniform { m: usize },
    /// Devices with `|h| >= h_min`, over-the-air aggregation.
    AirComp(ChannelParams),
}

/// Local solver run on each device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalSolver {
    ZerothOrder(EstimatorParams),
    /// First-order mini-batch SGD with `b1` samples per step (FedAvg).
    FirstOrder {
        b1: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub rounds: usize,
    pub local_iters: usize,
    pub eta: f64,
    pub solver: LocalSolver,
    pub participation: Participation,
    pub seed: u64,
    /// Evaluate metrics every `eval_stride` rounds (and always at round 0).
    pub eval_stride: usize,
    /// Worker threads for per-device work; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl TrainParams {
    pub fn zeroth_order(rounds: usize, local_iters: usize, eta: f64, estimator: EstimatorParams) -> Self {
        Self {
            rounds,
            local_iters,
            eta,
            solver: LocalSolver::ZerothOrder(estimator),
            participation: Participation::Full,
            seed: 0,
            eval_stride: 1,
            threads: None,
        }
    }

    pub fn participation(mut self, p: Participation) -> Self {
        self.participation = p;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }

    pub fn eval_stride(mut self, stride: usize) -> Self {
        self.eval_stride = stride;
        self
    }

    pub fn validate(&self, num_devices: usize, dim: usize) -> Result<()> {
        if self.rounds == 0 || self.local_iters == 0 {
            return Err(Error::InvalidConfig("T and H must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta must be finite and >= 0, got {}",
                self.eta
            )));
        }
        if self.eval_stride == 0 {
            return Err(Error::InvalidConfig("eval_stride must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        match self.solver {
            LocalSolver::ZerothOrder(p) if p.dim() != dim => {
                return Err(Error::InvalidConfig(format!(
                    "estimator dimension {} does not match model dimension {dim}",
                    p.dim()
                )))
            }
            LocalSolver::FirstOrder { b1: 0 } => return Err(Error::InvalidConfig("b1 must be >= 1".into())),
            _ => {}
        }
        match self.participation {
            Participation::Uniform { m } if m == 0 || m > num_devices => {
                Err(Error::InvalidConfig(format!("M = {m} must lie in 1..={num_devices}")))
            }
            Participation::AirComp(cp) => cp.validate(),
            _ => Ok(()),
        }
    }
}

/// Metrics of a model: the global loss, and optionally `|grad f|^2` and test accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub grad_sq: Option<f64>,
    pub test_acc: Option<f64>,
}

/// Computes [`Evaluation`]s. Never sees the counting wrappers used in training.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;
}

type TestMetric = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `f = (1/N) sum_i f_i`, with the gradient when every device exposes one.
#[derive(Clone)]
pub struct DeviceAverage {
    oracles: Vec<Arc<dyn LossOracle>>,
    test: Option<TestMetric>,
}

impl DeviceAverage {
    pub fn new(oracles: Vec<Arc<dyn LossOracle>>) -> Self {
        Self { oracles, test: None }
    }

    /// Adds a held-out metric reported as `test_acc`.
    pub fn with_test_metric(mut self, metric: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.test = Some(Arc::new(metric));
        self
    }
}

impl Evaluator for DeviceAverage {
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        let per_device: Vec<(f64, Option<ModelVector>)> = self
            .oracles
            .par_iter()
            .map(|o| -> Result<_> {
                let loss = o.mean_value(x)?;
                let grad = o.eval_gradient(x).transpose()?;
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let n = per_device.len() as f64;
        let loss = per_device.iter().map(|(l, _)| l).sum::<f64>() / n;
        let grad_sq = if per_device.iter().all(|(_, g)| g.is_some()) {
            let refs: Vec<&[f64]> = per_device.iter().map(|(_, g)| g.as_deref().unwrap_or(&[])).collect();
            Some(pairwise_sum(&refs).iter().map(|g| (g / n) * (g / n)).sum())
        } else {
            None
        };
        let test_acc = self.test.as_ref().map(|t| t(x));
        Ok(Evaluation {
            loss,
            grad_sq,
            test_acc,
        })
    }
}

/// Metrics and cohort statistics of round `t`, measured at `x^t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub loss: Option<f64>,
    pub grad_sq: Option<f64>,
    pub test_acc: Option<f64>,
    pub cohort: usize,
    /// `max_i |Delta_i|^2` over the cohort; absent for skipped rounds.
    pub delta_max: Option<f64>,
    /// Per-component variance of the aggregation noise (AirComp only).
    pub noise_var: Option<f64>,
    pub wall_ms: f64,
}

/// Whole-run counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub value_calls: u64,
    pub gradient_calls: u64,
    /// Rounds with an empty cohort; the model was left unchanged.
    pub skipped_rounds: usize,
    pub energy_violations: usize,
    pub max_energy_ratio: f64,
    /// Smallest cohort actually used (`M~`).
    pub min_cohort: usize,
}

/// Global model after training, with the full history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub x: ModelVector,
    /// Rounds completed; equals `history.len()`.
    pub t: usize,
    pub history: Vec<RoundRecord>,
    /// Metrics at the final model `x^T`.
    pub final_eval: Evaluation,
    /// `min_t |grad f(x^t)|^2` over the evaluated rounds `t = 0..T-1`.
    pub min_grad_sq: Option<f64>,
    pub stats: RunStats,
}

/// Run Algorithm-1 style training from `x0` on `oracles`.
pub fn run_training(
    oracles: &[Arc<dyn LossOracle>],
    x0: ModelVector,
    params: &TrainParams,
    evaluator: &dyn Evaluator,
) -> Result<GlobalState> {
    let n = oracles.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no devices".into()));
    }
    let dim = x0.dim();
    if let Some(bad) = oracles.iter().find(|o| o.dim() != dim) {
        return Err(Error::InvalidConfig(format!(
            "device dimension {} does not match model dimension {dim}",
            bad.dim()
        )));
    }
    params.validate(n, dim)?;
    match params.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| train(oracles, x0, params, evaluator)),
        None => train(oracles, x0, params, evaluator),
    }
}

fn train(
    oracles: &[Arc<dyn LossOracle>],
    x0: ModelVector,
    params: &TrainParams,
    evaluator: &dyn Evaluator,
) -> Result<GlobalState> {
    let n = oracles.len();
    let counts = Arc::new(CallCounts::default());
    let counted: Vec<CountingOracle<dyn LossOracle>> = oracles
        .iter()
        .map(|o| CountingOracle::with_counts(Arc::clone(o), Arc::clone(&counts)))
        .collect();

    let mut x = x0;
    let mut history = Vec::with_capacity(params.rounds);
    let mut stats = RunStats {
        min_cohort: usize::MAX,
        ..RunStats::default()
    };
    let mut min_grad_sq: Option<f64> = None;

    for t in 0..params.rounds {
        let started = Instant::now();
        let eval = if t % params.eval_stride == 0 {
            Some(evaluator.evaluate(&x)?)
        } else {
            None
        };
        if let Some(g) = eval.and_then(|e| e.grad_sq) {
            min_grad_sq = Some(min_grad_sq.map_or(g, |m| m.min(g)));
        }

        let channel = match params.participation {
            Participation::AirComp(cp) => {
                let mut rng = SeedPath::new(params.seed, Purpose::Channel).round(t).stream();
                Some((cp, draw_and_schedule(n, &cp, &mut rng)))
            }
            _ => None,
        };
        let cohort: Vec<usize> = match (&params.participation, &channel) {
            (Participation::Full, _) => (0..n).collect(),
            (Participation::Uniform { m }, _) => {
                let mut rng = SeedPath::new(params.seed, Purpose::DeviceSampling).round(t).stream();
                sample_devices(n, *m, &mut rng)?
            }
            (Participation::AirComp(_), Some((_, cs))) => cs.scheduled().to_vec(),
            (Participation::AirComp(_), None) => unreachable!("channel drawn above"),
        };

        let mut record = RoundRecord {
            t,
            loss: eval.map(|e| e.loss),
            grad_sq: eval.and_then(|e| e.grad_sq),
            test_acc: eval.and_then(|e| e.test_acc),
            cohort: cohort.len(),
            delta_max: None,
            noise_var: None,
            wall_ms: 0.0,
        };
        if cohort.is_empty() {
            stats.skipped_rounds += 1;
            record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            history.push(record);
            continue;
        }
        stats.min_cohort = stats.min_cohort.min(cohort.len());

        let deltas: Vec<(usize, ModelVector)> = cohort
            .par_iter()
            .map(|&i| {
                let key = StreamKey::new(params.seed, i, t);
                let r = match params.solver {
                    LocalSolver::ZerothOrder(p) => {
                        local_update(&counted[i], &x, params.local_iters, params.eta, &p, key)?
                    }
                    LocalSolver::FirstOrder { b1 } => {
                        fedavg_local_update(&counted[i], &x, params.local_iters, params.eta, b1, key)?
                    }
                };
                Ok((i, r.delta))
            })
            .collect::<Result<_>>()?;
        record.delta_max = Some(deltas.iter().map(|(_, d)| d.norm_sq()).fold(0.0, f64::max));

        let step = match &channel {
            None => ideal_aggregate(&deltas, t)?,
            Some((cp, cs)) => {
                let mut rng = SeedPath::new(params.seed, Purpose::ChannelNoise).round(t).stream();
                let (y, rec) = aircomp_aggregate(&deltas, cs, cp, t, &mut rng)?;
                stats.energy_violations += rec.energy_violations;
                stats.max_energy_ratio = stats.max_energy_ratio.max(rec.max_energy_ratio);
                record.noise_var = Some(rec.effective_noise_var);
                y
            }
        };
        x.axpy(1.0, &step);
        if !x.is_finite() {
            return Err(Error::Divergence {
                device: usize::MAX,
                round: t,
                step: params.local_iters,
            });
        }
        record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        history.push(record);
    }

    if stats.min_cohort == usize::MAX {
        stats.min_cohort = 0;
    }
    stats.value_calls = counts.values();
    stats.gradient_calls = counts.gradients();
    let final_eval = evaluator.evaluate(&x)?;
    Ok(GlobalState {
        x,
        t: history.len(),
        history,
        final_eval,
        min_grad_sq,
        stats,
    })
}
