//! Flat `key=value` run configuration.
//!
//! Values resolve in this order, later sources winning: built-in defaults,
//! preset, config file, command-line flags.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::dp_sgd::DpConfig;
use crate::error::{Error, Result};
use crate::federation::{FederatedConfig, RoundConfig};
use crate::model::{format_f64, ReducerKind};

/// Every configuration key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "'synthetic' or the path of a feature CSV"),
    ("n_examples", "synthetic dataset size before the train/test split"),
    ("n_features", "synthetic feature dimension"),
    ("separation", "distance between the synthetic class means"),
    ("test_fraction", "share of examples held out for testing"),
    ("clients", "number of clients K"),
    ("clients_per_round", "clients sampled per round J"),
    ("local_epochs", "local epochs per selected client T"),
    ("rounds", "federated rounds R"),
    ("clip_norm", "per-example gradient clip norm C ('inf' disables clipping)"),
    ("noise_multiplier", "noise multiplier sigma"),
    ("lot_size", "expected lot size L"),
    ("learning_rate", "learning rate"),
    ("delta", "target delta"),
    ("target_epsilon", "if set, calibrate sigma so the run ends at this epsilon ('none' to disable)"),
    ("reducer", "feature reducer: pca or random"),
    ("seed", "master seed"),
    ("output_dir", "directory for metrics.csv, model.txt and manifest.txt"),
    ("wall_clock", "record wall-clock seconds in metrics (true/false)"),
];

/// Keys written to manifests that are results rather than inputs.
pub const RESULT_KEYS: &[&str] = &["final_epsilon", "sampling_rate", "max_client_steps"];

/// Where examples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    Csv(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic => f.write_str("synthetic"),
            DataSource::Csv(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub data: DataSource,
    pub n_examples: usize,
    pub n_features: usize,
    pub separation: f64,
    pub test_fraction: f64,
    pub clients: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub lot_size: usize,
    pub learning_rate: f64,
    pub delta: f64,
    pub target_epsilon: Option<f64>,
    pub reducer: ReducerKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub wall_clock: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic,
            n_examples: 28_750,
            n_features: 16,
            separation: 6.0,
            test_fraction: 0.2,
            clients: 100,
            clients_per_round: 5,
            local_epochs: 1,
            rounds: 60,
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            lot_size: 8,
            learning_rate: 0.2,
            delta: 1e-5,
            target_epsilon: None,
            reducer: ReducerKind::Pca,
            seed: 0,
            output_dir: PathBuf::from("out"),
            wall_clock: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key}='{value}'")))
}

impl TrainingConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data" => {
                self.data = if value == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Csv(PathBuf::from(value))
                }
            }
            "n_examples" => self.n_examples = parse(key, value)?,
            "n_features" => self.n_features = parse(key, value)?,
            "separation" => self.separation = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "clients" => self.clients = parse(key, value)?,
            "clients_per_round" => self.clients_per_round = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "noise_multiplier" => self.noise_multiplier = parse(key, value)?,
            "lot_size" => self.lot_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "target_epsilon" => {
                self.target_epsilon = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "reducer" => self.reducer = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "wall_clock" => self.wall_clock = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped and
    /// result keys of a manifest are ignored, so a manifest is a valid config.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            let k = k.trim();
            if RESULT_KEYS.contains(&k) {
                continue;
            }
            self.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Current value of `key` in manifest form.
    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "data" => self.data.to_string(),
            "n_examples" => self.n_examples.to_string(),
            "n_features" => self.n_features.to_string(),
            "separation" => format_f64(self.separation),
            "test_fraction" => format_f64(self.test_fraction),
            "clients" => self.clients.to_string(),
            "clients_per_round" => self.clients_per_round.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "rounds" => self.rounds.to_string(),
            "clip_norm" => format_f64(self.clip_norm),
            "noise_multiplier" => format_f64(self.noise_multiplier),
            "lot_size" => self.lot_size.to_string(),
            "learning_rate" => format_f64(self.learning_rate),
            "delta" => format_f64(self.delta),
            "target_epsilon" => self.target_epsilon.map_or("none".into(), format_f64),
            "reducer" => self.reducer.to_string(),
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "wall_clock" => self.wall_clock.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        })
    }

    /// All keys as `key=value` lines in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Checks ranges that the components would otherwise reject later with a
    /// less specific message.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must be in (0, 1), got {}", self.test_fraction));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        if let Some(t) = self.target_epsilon {
            if t.is_nan() || t <= 0.0 || t.is_infinite() {
                return bad(format!("target_epsilon must be positive, got {t}"));
            }
        }
        if self.data == DataSource::Synthetic {
            if self.n_examples < 2 || self.n_features < 4 {
                return bad("synthetic data needs n_examples >= 2 and n_features >= 4".into());
            }
            if !self.separation.is_finite() || self.separation < 0.0 {
                return bad(format!("separation must be finite and >= 0, got {}", self.separation));
            }
        }
        self.round_config()?;
        self.dp_config(self.noise_multiplier)?;
        Ok(())
    }

    pub fn round_config(&self) -> Result<RoundConfig> {
        RoundConfig::new(self.clients, self.clients_per_round, self.local_epochs, self.rounds)
            .map_err(as_config)
    }

    pub fn dp_config(&self, noise_multiplier: f64) -> Result<DpConfig> {
        DpConfig::new(self.clip_norm, noise_multiplier, self.lot_size, self.learning_rate).map_err(as_config)
    }

    pub fn federated(&self, noise_multiplier: f64) -> Result<FederatedConfig> {
        Ok(FederatedConfig {
            rounds: self.round_config()?,
            dp: self.dp_config(noise_multiplier)?,
            delta: self.delta,
            reducer: self.reducer,
        })
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    }
}

/// Named starting points for `train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// The defaults.
    Default,
    /// 100 clients, 5 per round, synthetic data.
    PaperShape,
    /// One run per noise multiplier in [`SIGMA_SWEEP`].
    SigmaSweep,
    /// One run per local-epoch count in [`LOCAL_EPOCH_SWEEP`] at a common
    /// final epsilon.
    LocalEpochs,
}

pub const SIGMA_SWEEP: [f64; 3] = [0.15, 1.0, 4.0];
pub const LOCAL_EPOCH_SWEEP: [usize; 3] = [1, 2, 4];
/// Privacy budget shared by the runs of the local-epoch sweep.
pub const LOCAL_EPOCH_BUDGET: f64 = 4.5;

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Preset::Default),
            "paper-shape" => Ok(Preset::PaperShape),
            "sigma-sweep" => Ok(Preset::SigmaSweep),
            "local-epochs" => Ok(Preset::LocalEpochs),
            _ => Err(Error::Config(format!(
                "unknown preset '{s}' (expected default, paper-shape, sigma-sweep or local-epochs)"
            ))),
        }
    }
}

impl Preset {
    /// Base configuration of the preset.
    pub fn base(self) -> TrainingConfig {
        let mut cfg = TrainingConfig::default();
        match self {
            Preset::Default | Preset::SigmaSweep => {}
            Preset::PaperShape => {
                cfg.clients = 100;
                cfg.clients_per_round = 5;
                cfg.data = DataSource::Synthetic;
            }
            Preset::LocalEpochs => cfg.target_epsilon = Some(LOCAL_EPOCH_BUDGET),
        }
        cfg
    }

    /// Expands a resolved configuration into the runs of the preset. Sweep
    /// members write to `<output_dir>/<name>`.
    pub fn expand(self, cfg: &TrainingConfig) -> Vec<(String, TrainingConfig)> {
        let member = |name: String, edit: &dyn Fn(&mut TrainingConfig)| {
            let mut c = cfg.clone();
            edit(&mut c);
            c.output_dir = cfg.output_dir.join(&name);
            (name, c)
        };
        match self {
            Preset::Default | Preset::PaperShape => vec![(String::new(), cfg.clone())],
            Preset::SigmaSweep => SIGMA_SWEEP
                .iter()
                .map(|&s| member(format!("sigma-{s}"), &|c| c.noise_multiplier = s))
                .collect(),
            Preset::LocalEpochs => LOCAL_EPOCH_SWEEP
                .iter()
                .map(|&t| member(format!("epochs-{t}"), &|c| c.local_epochs = t))
                .collect(),
        }
    }
}
