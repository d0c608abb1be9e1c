//! Turn an [`ExperimentConfig`] into oracles, an evaluator and training
//! parameters, run it, and assemble the sidecar report.

use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use super::config::{Algorithm, ExperimentConfig, ImageSource, LossKind, ParticipationMode, StepSize};
use super::output::{write_json, write_round_csv};
use crate::aircomp::ChannelParams;
use crate::data::{load_idx, make_synthetic_images, random_split, shard_partition, Dataset, QuadraticTestbed};
use crate::error::{Error, Result};
use crate::estimator::EstimatorParams;
use crate::losses::{accuracy, AttackImage, AttackLoss, Classifier, LinearClassifier, LossOracle, SoftmaxLoss};
use crate::rng::{Purpose, SeedPath};
use crate::runtime::{run_training, DeviceAverage, Evaluator, GlobalState, LocalSolver, Participation, TrainParams};
use crate::theory::{
    bound_rhs, check_cap, corollary_schedule, derived_constants, eta_cap_terms, max_local_iters, AssumptionConstants,
    BoundReport, CapCheck, CapInputs, CapTerm, DerivedConstants, Schedule, Setting,
};
use crate::vector::ModelVector;

/// Facts about the constructed instance, recorded in the sidecar.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InstanceInfo {
    pub dim: usize,
    pub min_samples_per_device: usize,
    pub max_samples_per_device: usize,
    /// Samples dropped so the shard count divides the training set.
    pub dropped_tail: usize,
    pub train_samples: Option<usize>,
    pub test_samples: Option<usize>,
    /// Accuracy of the attacked classifier on its own training pool.
    pub classifier_accuracy: Option<f64>,
    pub optimum_loss: Option<f64>,
}

/// Where the learning rate and smoothing step came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedSteps {
    pub eta: f64,
    pub mu: f64,
    pub eta_from_corollary: bool,
    pub mu_from_corollary: bool,
}

/// Theory quantities for the configured sizes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub setting: Setting,
    /// The corollary schedule for these sizes, whether or not it is used.
    pub corollary: Schedule,
    /// Order estimate of the largest useful `H` (hidden constants set to 1).
    pub max_local_iters_order: usize,
    pub assumption_constants: Option<AssumptionConstants>,
    pub derived: Option<DerivedConstants>,
    pub cap_terms: Option<Vec<CapTerm>>,
    pub cap_check: Option<CapCheck>,
    /// Advisory: right-hand side of the optimality-gap bound at the used steps.
    pub bound: Option<BoundReport>,
}

/// A fully built experiment, ready to run.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub oracles: Vec<Arc<dyn LossOracle>>,
    pub evaluator: DeviceAverage,
    pub x0: ModelVector,
    pub params: TrainParams,
    pub steps: ResolvedSteps,
    pub constants: Option<AssumptionConstants>,
    pub info: InstanceInfo,
}

/// Everything written next to the CSV.
#[derive(Debug, Clone, Serialize)]
pub struct Sidecar {
    pub config: ExperimentConfig,
    pub steps: ResolvedSteps,
    pub instance: InstanceInfo,
    pub theory: Option<TheoryReport>,
    pub theory_error: Option<String>,
    pub rounds: usize,
    pub final_eval: crate::runtime::Evaluation,
    pub min_grad_sq: Option<f64>,
    pub stats: crate::runtime::RunStats,
}

pub struct RunOutput {
    pub state: GlobalState,
    pub sidecar: Sidecar,
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
}

/// Expected cohort under threshold scheduling, `floor(N exp(-h_min^2))`, at least 1.
pub fn expected_cohort(n: usize, cp: &ChannelParams) -> usize {
    ((n as f64 * cp.inclusion_probability()).floor() as usize).clamp(1, n)
}

/// Theory sizes implied by a config and model dimension.
pub fn theory_setting(cfg: &ExperimentConfig, dim: usize) -> Result<Setting> {
    let (d, b1, b2, n, h) = (dim, cfg.b1, cfg.b2, cfg.devices, cfg.local_iters);
    Ok(match cfg.participation.mode {
        ParticipationMode::Full => Setting::full(d, b1, b2, n, h),
        ParticipationMode::Uniform => Setting::partial(d, b1, b2, n, cfg.participation.m, h),
        ParticipationMode::AirComp => {
            let cp = cfg.channel.params()?;
            let gamma = if cp.sigma_w_sq == 0.0 {
                f64::INFINITY
            } else {
                cp.gamma()
            };
            Setting::aircomp(d, b1, b2, n, expected_cohort(n, &cp), h, gamma)
        }
    })
}

/// Theory report; `constants` and `f0` enable the cap check and bound.
pub fn theory_report(
    cfg: &ExperimentConfig,
    dim: usize,
    steps: Option<ResolvedSteps>,
    constants: Option<AssumptionConstants>,
    f0: Option<f64>,
) -> Result<TheoryReport> {
    let setting = theory_setting(cfg, dim)?;
    setting.validate()?;
    let corollary = corollary_schedule(&setting, cfg.rounds)?;
    let max_h = max_local_iters(
        setting.variant,
        setting.d,
        setting.b1,
        setting.b2,
        setting.cohort,
        cfg.rounds,
    )?;
    let mut report = TheoryReport {
        setting,
        corollary,
        max_local_iters_order: max_h,
        assumption_constants: constants,
        derived: None,
        cap_terms: None,
        cap_check: None,
        bound: None,
    };
    if let Some(ac) = constants {
        report.derived = Some(derived_constants(&ac, &setting)?);
        let ci = CapInputs::new(&ac, &setting)?;
        report.cap_terms = Some(eta_cap_terms(&ci));
        let (eta, mu) = steps.map_or((corollary.eta, corollary.mu), |s| (s.eta, s.mu));
        report.cap_check = Some(check_cap(&ci, eta));
        if let Some(f0) = f0 {
            if eta > 0.0 {
                report.bound = Some(bound_rhs(&ac, &setting, eta, mu, cfg.rounds, f0)?);
            }
        }
    }
    Ok(report)
}

/// Fit a linear softmax classifier by full-batch gradient descent from zero.
pub fn fit_linear_classifier(data: Arc<Dataset>, steps: usize, lr: f64) -> Result<LinearClassifier> {
    let d = data.feature_dim();
    let loss = SoftmaxLoss::whole(data)?;
    let mut w = ModelVector::zeros(loss.dim());
    for _ in 0..steps {
        let g = loss.eval_gradient(&w).expect("softmax exposes gradients")?;
        w.axpy(-lr, &g);
    }
    LinearClassifier::from_softmax(w.into_inner(), d)
}

fn fashion_mnist(cfg: &ExperimentConfig, train: bool) -> Result<Dataset> {
    let dir = cfg.data_dir();
    let prefix = if train { "train" } else { "t10k" };
    let ds = load_idx(
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )?;
    let keep = if train {
        cfg.softmax.train_subset
    } else {
        cfg.softmax.test_subset
    };
    if keep == 0 || keep >= ds.len() {
        Ok(ds)
    } else {
        ds.stride_subsample(keep)
    }
}

fn sizes(oracles: &[Arc<dyn LossOracle>]) -> (usize, usize) {
    let it = oracles.iter().map(|o| o.num_samples());
    (it.clone().min().unwrap_or(0), it.max().unwrap_or(0))
}

/// Build every piece of an experiment without running it.
pub fn build_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let n = cfg.devices;
    let mut info = InstanceInfo::default();
    let mut constants = None;
    let (oracles, evaluator): (Vec<Arc<dyn LossOracle>>, DeviceAverage) = match cfg.loss {
        LossKind::Quadratic => {
            let q = &cfg.quadratic;
            let mut rng = SeedPath::new(q.instance_seed.unwrap_or(cfg.seed), Purpose::Instance).stream();
            let fed = QuadraticTestbed::new(n, q.dim)
                .heterogeneity(q.heterogeneity)
                .noise_scale(q.noise_scale)
                .samples_per_device(q.samples_per_device)
                .spectrum(q.eig_min, q.eig_max)
                .generate(&mut rng)?;
            constants = fed.assumption_constants();
            info.optimum_loss = fed.optimum().map(|(_, f)| f);
            let oracles = fed.oracles();
            (oracles.clone(), DeviceAverage::new(oracles))
        }
        LossKind::Softmax => {
            let train = Arc::new(fashion_mnist(cfg, true)?);
            let test = Arc::new(fashion_mnist(cfg, false)?);
            let mut rng = SeedPath::new(cfg.seed, Purpose::Partition).stream();
            let part = shard_partition(
                &train,
                cfg.softmax.num_shards,
                cfg.softmax.shards_per_device,
                n,
                &mut rng,
            )?;
            info.dropped_tail = part.dropped_tail();
            info.train_samples = Some(train.len());
            info.test_samples = Some(test.len());
            let oracles = part
                .devices()
                .iter()
                .map(|idx| Ok(Arc::new(SoftmaxLoss::new(Arc::clone(&train), idx.clone())?) as Arc<dyn LossOracle>))
                .collect::<Result<Vec<_>>>()?;
            let eval = DeviceAverage::new(oracles.clone()).with_test_metric(move |x| accuracy(x, &test));
            (oracles, eval)
        }
        LossKind::Attack => {
            let a = &cfg.attack;
            let mut rng = SeedPath::new(cfg.seed, Purpose::Instance).stream();
            let pool = match a.source {
                ImageSource::Synthetic => make_synthetic_images(a.pool, a.feature_dim, a.classes, a.spread, &mut rng)?,
                ImageSource::FashionMnist => fashion_mnist(cfg, true)?,
            };
            let pool = Arc::new(pool);
            let clf = fit_linear_classifier(Arc::clone(&pool), a.classifier_steps, a.classifier_lr)?;
            let to_f64 = |i: usize| pool.features(i).iter().map(|&p| f64::from(p)).collect::<Vec<f64>>();
            let hits = (0..pool.len())
                .filter(|&i| clf.predict(&centered(&to_f64(i))) == pool.label(i))
                .count();
            info.classifier_accuracy = Some(hits as f64 / pool.len() as f64);
            let chosen: Vec<usize> = (0..pool.len())
                .filter(|&i| pool.label(i) == a.target_class && clf.predict(&centered(&to_f64(i))) == a.target_class)
                .take(a.images)
                .collect();
            if chosen.len() < n {
                return Err(Error::InvalidConfig(format!(
                    "only {} correctly classified images of class {} for {n} devices",
                    chosen.len(),
                    a.target_class
                )));
            }
            let min_per_device = cfg.b1.min(chosen.len() / n).max(1);
            let mut split_rng = SeedPath::new(cfg.seed, Purpose::Partition).stream();
            let part = random_split(chosen.len(), n, min_per_device, &mut split_rng)?;
            let clf: Arc<dyn Classifier> = Arc::new(clf);
            let oracles = part
                .devices()
                .iter()
                .map(|idx| {
                    let images = idx
                        .iter()
                        .map(|&k| AttackImage::from_unit_pixels(&to_f64(chosen[k]), a.target_class))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(Arc::new(AttackLoss::new(Arc::clone(&clf), images, a.c, a.confidence)?) as Arc<dyn LossOracle>)
                })
                .collect::<Result<Vec<_>>>()?;
            (oracles.clone(), DeviceAverage::new(oracles))
        }
    };
    let dim = oracles[0].dim();
    info.dim = dim;
    (info.min_samples_per_device, info.max_samples_per_device) = sizes(&oracles);

    let corollary = theory_setting(cfg, dim).and_then(|s| corollary_schedule(&s, cfg.rounds));
    let resolve = |step: StepSize, pick: fn(&Schedule) -> f64| -> Result<(f64, bool)> {
        match step {
            StepSize::Fixed(v) => Ok((v, false)),
            StepSize::Corollary => corollary
                .as_ref()
                .map(|s| (pick(s), true))
                .map_err(|e| Error::InvalidConfig(format!("cannot evaluate the corollary schedule: {e}"))),
        }
    };
    let (eta, eta_from_corollary) = resolve(cfg.eta, |s| s.eta)?;
    let (mu, mu_from_corollary) = resolve(cfg.mu, |s| s.mu)?;
    let steps = ResolvedSteps {
        eta,
        mu,
        eta_from_corollary,
        mu_from_corollary,
    };

    let solver = match cfg.algorithm {
        Algorithm::FedZo => LocalSolver::ZerothOrder(EstimatorParams::new(mu, cfg.b1, cfg.b2, dim)?),
        Algorithm::FedAvg => LocalSolver::FirstOrder { b1: cfg.b1 },
    };
    let participation = match cfg.participation.mode {
        ParticipationMode::Full => Participation::Full,
        ParticipationMode::Uniform => Participation::Uniform { m: cfg.participation.m },
        ParticipationMode::AirComp => Participation::AirComp(cfg.channel.params()?),
    };
    let params = TrainParams {
        rounds: cfg.rounds,
        local_iters: cfg.local_iters,
        eta,
        solver,
        participation,
        seed: cfg.seed,
        eval_stride: cfg.eval_stride,
        threads: (cfg.threads > 0).then_some(cfg.threads),
    };
    Ok(Experiment {
        config: cfg.clone(),
        oracles,
        evaluator,
        x0: ModelVector::zeros(dim),
        params,
        steps,
        constants,
        info,
    })
}

fn centered(pixels: &[f64]) -> Vec<f64> {
    pixels.iter().map(|p| p - 0.5).collect()
}

impl Experiment {
    pub fn train(&self) -> Result<GlobalState> {
        run_training(&self.oracles, self.x0.clone(), &self.params, &self.evaluator)
    }

    pub fn theory(&self) -> Result<TheoryReport> {
        let f0 = self.evaluator.evaluate(&self.x0)?.loss;
        theory_report(&self.config, self.info.dim, Some(self.steps), self.constants, Some(f0))
    }

    /// Train, then assemble the sidecar.
    pub fn run(&self) -> Result<(GlobalState, Sidecar)> {
        let state = self.train()?;
        let (theory, theory_error) = match self.theory() {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let sidecar = Sidecar {
            config: self.config.clone(),
            steps: self.steps,
            instance: self.info.clone(),
            theory,
            theory_error,
            rounds: state.t,
            final_eval: state.final_eval,
            min_grad_sq: state.min_grad_sq,
            stats: state.stats.clone(),
        };
        Ok((state, sidecar))
    }
}

/// Build and run `cfg`; with `write`, emit `<output_dir>/<name>.csv` and `.json`.
pub fn run_experiment(cfg: &ExperimentConfig, write: bool) -> Result<RunOutput> {
    let exp = build_experiment(cfg)?;
    let (state, sidecar) = exp.run()?;
    let (csv_path, json_path) = if write {
        let dir = cfg.output_dir();
        let csv = dir.join(format!("{}.csv", cfg.name));
        let json = dir.join(format!("{}.json", cfg.name));
        write_round_csv(&state.history, &csv)?;
        write_json(&sidecar, &json)?;
        (Some(csv), Some(json))
    } else {
        (None, None)
    };
    Ok(RunOutput {
        state,
        sidecar,
        csv_path,
        json_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.devices = 4;
        c.rounds = 3;
        c.local_iters = 2;
        c.b1 = 2;
        c.b2 = 2;
        c.quadratic.dim = 5;
        c
    }

    #[test]
    fn quadratic_experiment_runs_and_reports_theory() {
        let out = run_experiment(&small(), false).unwrap();
        assert_eq!(out.state.history.len(), 3);
        let theory = out.sidecar.theory.unwrap();
        assert!(theory.derived.is_some() && theory.cap_check.is_some() && theory.bound.is_some());
        assert_eq!(out.sidecar.stats.gradient_calls, 0);
        assert!(out.sidecar.instance.optimum_loss.is_some());
    }

    #[test]
    fn corollary_steps_are_resolved() {
        let mut c = small();
        c.eta = StepSize::Corollary;
        c.mu = StepSize::Corollary;
        let exp = build_experiment(&c).unwrap();
        let s = corollary_schedule(&Setting::full(5, 2, 2, 4, 2), 3).unwrap();
        assert_eq!(exp.steps.eta, s.eta);
        assert_eq!(exp.steps.mu, s.mu);
        assert!(exp.steps.eta_from_corollary && exp.steps.mu_from_corollary);
    }

    #[test]
    fn attack_experiment_on_synthetic_images() {
        let mut c = small();
        c.loss = LossKind::Attack;
        c.attack.images = 40;
        c.attack.pool = 400;
        c.attack.feature_dim = 16;
        c.attack.classifier_steps = 50;
        let out = run_experiment(&c, false).unwrap();
        assert!(out.state.history.iter().all(|r| r.grad_sq.is_none()));
        assert!(out.sidecar.instance.classifier_accuracy.unwrap() > 0.5);
        assert_eq!(out.sidecar.instance.dim, 16);
    }

    #[test]
    fn aircomp_setting_uses_expected_cohort() {
        let mut c = small();
        c.devices = 50;
        c.participation.mode = ParticipationMode::AirComp;
        let s = theory_setting(&c, 10).unwrap();
        assert_eq!(s.cohort, 26);
        assert!((s.gamma - 0.64).abs() < 1e-12);
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let mut c = small();
        c.loss = LossKind::Softmax;
        c.softmax.num_shards = 8;
        c.softmax.data_dir = Some(PathBuf::from("/nonexistent/fedzo"));
        assert!(matches!(
            build_experiment(&c),
            Err(Error::Idx(_)) | Err(Error::Io { .. })
        ));
    }
}
