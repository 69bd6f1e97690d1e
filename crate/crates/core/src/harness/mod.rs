//! Experiment harness: configuration, data, metrics and presets.

pub mod config;
pub mod data;
pub mod metrics;

use std::fs;
use std::time::Instant;

use crate::accountant::calibrate_sigma;
use crate::error::{Error, Result};
use crate::federation::{run_training, selection_counts};
use crate::model::{format_f64, Example, HybridModel};
use crate::rng::{stream, Purpose};
use config::{DataSource, TrainingConfig};
use data::{generate_synthetic, load_features_csv, train_test_split};
use metrics::{write_metrics_csv, MetricsRow};

/// Train and test examples of a run.
pub fn load_dataset(cfg: &TrainingConfig) -> Result<(Vec<Example>, Vec<Example>)> {
    let examples = match &cfg.data {
        DataSource::Synthetic => generate_synthetic(
            cfg.n_examples,
            cfg.n_features,
            cfg.separation,
            &mut stream(cfg.seed, Purpose::Synthetic, 0, 0),
        )?,
        DataSource::Csv(path) => load_features_csv(path)?,
    };
    if examples.is_empty() {
        return Err(Error::Data("dataset is empty".into()));
    }
    train_test_split(examples, cfg.test_fraction, &mut stream(cfg.seed, Purpose::Split, 0, 0))
        .map_err(|e| Error::Data(e.to_string()))
}

/// Privacy-relevant shape of a run, known before training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyPlan {
    /// `L / N` for the common shard size `N`.
    pub sampling_rate: f64,
    /// Local steps taken by the most frequently selected client.
    pub max_client_steps: u64,
    /// Noise multiplier the run will use.
    pub noise_multiplier: f64,
}

/// Works out `q`, the largest per-client step count and the noise multiplier
/// (calibrated when `target_epsilon` is set).
pub fn plan_privacy(cfg: &TrainingConfig, n_train: usize) -> Result<PrivacyPlan> {
    let rounds = cfg.round_config()?;
    if cfg.clients > n_train {
        return Err(Error::Data(format!("{n_train} training examples cannot feed {} clients", cfg.clients)));
    }
    let shard = n_train / cfg.clients;
    let dp = cfg.dp_config(cfg.noise_multiplier)?;
    let sampling_rate = dp.sampling_rate(shard).map_err(|e| Error::Config(e.to_string()))?;
    let per_selection = (cfg.local_epochs * dp.steps_per_epoch(shard)) as u64;
    let max_selected = selection_counts(cfg.seed, &rounds)?.into_iter().max().unwrap_or(0);
    let max_client_steps = max_selected * per_selection;
    let noise_multiplier = match cfg.target_epsilon {
        None => cfg.noise_multiplier,
        Some(target) => calibrate_sigma(target, sampling_rate, max_client_steps, cfg.delta)
            .map_err(|e| Error::Config(e.to_string()))?,
    };
    Ok(PrivacyPlan { sampling_rate, max_client_steps, noise_multiplier })
}

/// What a finished experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: TrainingConfig,
    pub plan: PrivacyPlan,
    pub rows: Vec<MetricsRow>,
    pub model: HybridModel,
    pub final_epsilon: f64,
}

impl ExperimentReport {
    /// Resolved configuration plus the run's results, as `key=value` lines.
    pub fn manifest(&self) -> String {
        let mut out = String::from("# qfldp run manifest\n");
        out.push_str(&self.config.to_text());
        out.push_str(&format!("final_epsilon={}\n", format_f64(self.final_epsilon)));
        out.push_str(&format!("sampling_rate={}\n", format_f64(self.plan.sampling_rate)));
        out.push_str(&format!("max_client_steps={}\n", self.plan.max_client_steps));
        out
    }
}

/// Runs one configuration in memory.
pub fn run_in_memory(cfg: &TrainingConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (train, test) = load_dataset(cfg)?;
    let plan = plan_privacy(cfg, train.len())?;
    let mut resolved = cfg.clone();
    resolved.noise_multiplier = plan.noise_multiplier;
    let fed = resolved.federated(plan.noise_multiplier)?;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(cfg.rounds);
    let outcome = run_training(&fed, &train, &test, cfg.seed, |m, _| {
        if m.round == 0 {
            return;
        }
        log::info!("round {} accuracy {:.4} epsilon {:.4}", m.round, m.test.accuracy, m.epsilon);
        rows.push(MetricsRow {
            round: m.round,
            epsilon: m.epsilon,
            train_loss: m.train.loss,
            test_loss: m.test.loss,
            test_accuracy: m.test.accuracy,
            wall_seconds: if cfg.wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        });
    })?;
    Ok(ExperimentReport {
        config: resolved,
        plan,
        rows,
        model: outcome.model,
        final_epsilon: outcome.epsilon,
    })
}

/// Runs one configuration and writes `metrics.csv`, `model.txt` and
/// `manifest.txt` into its output directory.
pub fn run_experiment(cfg: &TrainingConfig) -> Result<ExperimentReport> {
    let report = run_in_memory(cfg)?;
    let dir = &report.config.output_dir;
    fs::create_dir_all(dir)?;
    write_metrics_csv(&report.rows, fs::File::create(dir.join("metrics.csv"))?)?;
    fs::write(dir.join("model.txt"), report.model.to_text())?;
    fs::write(dir.join("manifest.txt"), report.manifest())?;
    Ok(report)
}
