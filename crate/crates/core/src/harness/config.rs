//! Experiment configuration: one TOML file with flat tables.
//!
//! Every field has a default, so an empty file is a valid (small quadratic)
//! experiment. Any field can be overridden with `key=value`, where `key` is a
//! dotted path (`channel.snr_db`) or one of the short aliases in [`ALIASES`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::aircomp::{ChannelParams, NoiseMode};
use crate::error::{Error, Result};
use crate::losses::ConfidenceKind;

/// Short names accepted by overrides and sweeps.
pub const ALIASES: &[(&str, &str)] = &[
    ("N", "devices"),
    ("T", "rounds"),
    ("H", "local_iters"),
    ("M", "participation.m"),
    ("d", "quadratic.dim"),
    ("snr_db", "channel.snr_db"),
    ("SNR", "channel.snr_db"),
    ("h_min", "channel.h_min"),
];

/// Environment variable that sets the default output directory.
pub const OUT_DIR_ENV: &str = "FEDZO_OUT_DIR";
/// Environment variable that sets the default Fashion-MNIST directory.
pub const DATA_DIR_ENV: &str = "FEDZO_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Quadratic,
    Softmax,
    Attack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Zeroth-order local steps.
    FedZo,
    /// First-order mini-batch SGD local steps (baseline).
    FedAvg,
}

/// A learning rate or smoothing step: a number, or `"corollary"` to use the
/// theory schedule for the configured sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    Corollary,
}

impl Serialize for StepSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Fixed(v) => s.serialize_f64(*v),
            StepSize::Corollary => s.serialize_str("corollary"),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Int(v) => Ok(StepSize::Fixed(v as f64)),
            Raw::Text(t) if t == "corollary" => Ok(StepSize::Corollary),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"corollary\", got {t:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticipationMode {
    Full,
    Uniform,
    AirComp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticipationConfig {
    pub mode: ParticipationMode,
    /// Devices per round in uniform mode.
    pub m: usize,
}

impl Default for ParticipationConfig {
    fn default() -> Self {
        Self {
            mode: ParticipationMode::Full,
            m: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub power: f64,
    /// `10 log10(P / sigma_w^2)`; ignored when `sigma_w_sq` is set.
    pub snr_db: f64,
    pub sigma_w_sq: Option<f64>,
    pub h_min: f64,
    pub noise_mode: NoiseMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            power: 1.0,
            snr_db: 0.0,
            sigma_w_sq: None,
            h_min: 0.8,
            noise_mode: NoiseMode::RealPart,
        }
    }
}

impl ChannelConfig {
    pub fn params(&self) -> Result<ChannelParams> {
        let sigma = self.sigma_w_sq.unwrap_or(self.power * 10f64.powf(-self.snr_db / 10.0));
        Ok(ChannelParams::new(self.power, sigma, self.h_min)?.with_noise_mode(self.noise_mode))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub heterogeneity: f64,
    pub noise_scale: f64,
    pub samples_per_device: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    /// Seed of the problem instance; defaults to the run seed.
    pub instance_seed: Option<u64>,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            heterogeneity: 0.5,
            noise_scale: 0.1,
            samples_per_device: 50,
            eig_min: 0.5,
            eig_max: 2.0,
            instance_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftmaxConfig {
    /// Directory with the four Fashion-MNIST IDX files.
    pub data_dir: Option<PathBuf>,
    /// Training samples kept (stride subsample); 0 keeps all.
    pub train_subset: usize,
    /// Test samples kept (stride subsample); 0 keeps all.
    pub test_subset: usize,
    pub num_shards: usize,
    pub shards_per_device: usize,
}

impl Default for SoftmaxConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            train_subset: 10_000,
            test_subset: 2_000,
            num_shards: 20,
            shards_per_device: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    /// Gaussian-blob images generated in memory.
    Synthetic,
    /// Fashion-MNIST training images from `softmax.data_dir`.
    FashionMnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub source: ImageSource,
    /// Class whose correctly classified images are attacked.
    pub target_class: usize,
    /// Images spread over the devices (fewer if not enough are correctly classified).
    pub images: usize,
    /// Distortion weight `c`.
    pub c: f64,
    pub confidence: ConfidenceKind,
    /// Synthetic source only.
    pub feature_dim: usize,
    pub classes: usize,
    pub spread: f64,
    pub pool: usize,
    /// Full-batch gradient steps used to fit the attacked linear classifier.
    pub classifier_steps: usize,
    pub classifier_lr: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            source: ImageSource::Synthetic,
            target_class: 0,
            images: 500,
            c: 1.0,
            confidence: ConfidenceKind::Logits,
            feature_dim: 64,
            classes: 10,
            spread: 0.15,
            pool: 3000,
            classifier_steps: 300,
            classifier_lr: 0.5,
        }
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of the output files.
    pub name: String,
    pub loss: LossKind,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Total devices `N`.
    pub devices: usize,
    /// Rounds `T`.
    pub rounds: usize,
    /// Local iterations `H`.
    pub local_iters: usize,
    pub eta: StepSize,
    pub mu: StepSize,
    pub b1: usize,
    pub b2: usize,
    pub eval_stride: usize,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    /// Defaults to `$FEDZO_OUT_DIR`, else `runs`.
    pub output_dir: Option<PathBuf>,
    pub participation: ParticipationConfig,
    pub channel: ChannelConfig,
    pub quadratic: QuadraticConfig,
    pub softmax: SoftmaxConfig,
    pub attack: AttackConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            loss: LossKind::Quadratic,
            algorithm: Algorithm::FedZo,
            seed: 0,
            devices: 10,
            rounds: 100,
            local_iters: 5,
            eta: StepSize::Fixed(0.001),
            mu: StepSize::Fixed(0.001),
            b1: 25,
            b2: 20,
            eval_stride: 1,
            threads: 0,
            output_dir: None,
            participation: ParticipationConfig::default(),
            channel: ChannelConfig::default(),
            quadratic: QuadraticConfig::default(),
            softmax: SoftmaxConfig::default(),
            attack: AttackConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Apply one `key=value` override. Values parse as TOML, falling back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {assignment:?} is not key=value")))?;
        let key = resolve_alias(key.trim());
        let value = parse_value(raw.trim());
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().unwrap_or_default();
        let mut table = &mut doc;
        for part in parts {
            table = table
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not a table")))?;
        }
        table.insert(leaf.to_owned(), value);
        *self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("override {key}: {e}")))?;
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.softmax
            .data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data/fashion-mnist"))
    }

    /// Cross-field checks that do not need data on disk.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a plain file stem", self.name));
        }
        if self.devices == 0 || self.rounds == 0 || self.local_iters == 0 {
            return bad("devices, rounds and local_iters must be >= 1".into());
        }
        if self.b1 == 0 || self.b2 == 0 {
            return bad("b1 and b2 must be >= 1".into());
        }
        if self.eval_stride == 0 {
            return bad("eval_stride must be >= 1".into());
        }
        if let StepSize::Fixed(eta) = self.eta {
            if !(eta >= 0.0 && eta.is_finite()) {
                return bad(format!("eta must be finite and >= 0, got {eta}"));
            }
        }
        if let StepSize::Fixed(mu) = self.mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad(format!("mu must be finite and > 0, got {mu}"));
            }
        }
        match self.participation.mode {
            ParticipationMode::Uniform if self.participation.m == 0 || self.participation.m > self.devices => {
                return bad(format!(
                    "participation.m = {} must lie in 1..={}",
                    self.participation.m, self.devices
                ));
            }
            ParticipationMode::AirComp => {
                self.channel
                    .params()
                    .map_err(|e| Error::InvalidConfig(format!("channel: {e}")))?;
            }
            _ => {}
        }
        if self.algorithm == Algorithm::FedAvg && self.loss == LossKind::Attack {
            return bad("the FedAvg baseline needs gradients; the attack loss has none".into());
        }
        match self.loss {
            LossKind::Quadratic => {
                let q = &self.quadratic;
                if q.dim == 0 || q.samples_per_device == 0 {
                    return bad("quadratic.dim and quadratic.samples_per_device must be >= 1".into());
                }
            }
            LossKind::Softmax => {
                let s = &self.softmax;
                if s.shards_per_device == 0 || s.num_shards != self.devices * s.shards_per_device {
                    return bad(format!(
                        "softmax.num_shards ({}) must equal devices ({}) x shards_per_device ({})",
                        s.num_shards, self.devices, s.shards_per_device
                    ));
                }
            }
            LossKind::Attack => {
                let a = &self.attack;
                if a.images < self.devices {
                    return bad(format!(
                        "attack.images ({}) must be >= devices ({})",
                        a.images, self.devices
                    ));
                }
                if !(a.c > 0.0) || a.classes < 2 || a.feature_dim == 0 || a.target_class >= a.classes {
                    return bad("attack needs c > 0, >= 2 classes, feature_dim >= 1, target_class < classes".into());
                }
            }
        }
        Ok(())
    }
}

pub fn resolve_alias(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| full)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_tables_and_step_modes() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            loss = "softmax"
            devices = 50
            eta = "corollary"
            mu = 0.01
            [participation]
            mode = "aircomp"
            [channel]
            snr_db = -5.0
            noise_mode = "full_complex"
            [softmax]
            num_shards = 100
            "#,
        )
        .unwrap();
        assert_eq!(c.loss, LossKind::Softmax);
        assert_eq!(c.eta, StepSize::Corollary);
        assert_eq!(c.mu, StepSize::Fixed(0.01));
        assert_eq!(c.participation.mode, ParticipationMode::AirComp);
        assert_eq!(c.channel.noise_mode, NoiseMode::FullComplex);
        let cp = c.channel.params().unwrap();
        assert!((cp.sigma_w_sq - 10f64.powf(0.5)).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("rounds = 3\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml_str("eta = \"fast\"").is_err());
    }

    #[test]
    fn overrides_and_aliases() {
        let mut c = ExperimentConfig::default();
        c.apply_override("H=20").unwrap();
        c.apply_override("channel.snr_db=-10").unwrap();
        c.apply_override("participation.mode=uniform").unwrap();
        c.apply_override("M=3").unwrap();
        c.apply_override("eta=corollary").unwrap();
        c.apply_override("name=sweep_arm").unwrap();
        assert_eq!(c.local_iters, 20);
        assert_eq!(c.channel.snr_db, -10.0);
        assert_eq!(c.participation.mode, ParticipationMode::Uniform);
        assert_eq!(c.participation.m, 3);
        assert_eq!(c.eta, StepSize::Corollary);
        assert_eq!(c.name, "sweep_arm");
        assert!(c.apply_override("H").is_err());
        assert!(c.apply_override("H=-1").is_err());
        assert!(c.apply_override("nope=1").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.eta = StepSize::Corollary;
        c.channel.sigma_w_sq = Some(0.5);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_catches_cross_field_errors() {
        let mut c = ExperimentConfig::default();
        c.participation = ParticipationConfig {
            mode: ParticipationMode::Uniform,
            m: 11,
        };
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig {
            loss: LossKind::Softmax,
            ..ExperimentConfig::default()
        };
        c.softmax.num_shards = 7;
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            loss: LossKind::Attack,
            algorithm: Algorithm::FedAvg,
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
