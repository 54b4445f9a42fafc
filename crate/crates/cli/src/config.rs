//! The serializable configuration of one CLI run.

use std::path::{Path, PathBuf};

use ddn_core::bandit::StrategyConfig;
use ddn_core::eval::figures::AnalysisConfig;
use ddn_core::network::{LossKind, NetworkConfig};
use ddn_core::search::SearchConfig;
use ddn_core::sim::ExperimentConfig;
use ddn_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory relative output paths are
/// resolved against.
pub const OUTPUT_ROOT_ENV: &str = "DDN_OUTPUT_ROOT";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Upper bound on concurrently running replications or trials.
    pub jobs: usize,
    pub scenario: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub train: TrainSection,
    pub analysis: AnalysisConfig,
    pub simulate: SimulateSection,
    pub search: SearchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            output_dir: PathBuf::from("out"),
            seeds: vec![0],
            jobs: 1,
            scenario: None,
            dataset: None,
            checkpoints: Vec::new(),
            train: TrainSection::default(),
            analysis: AnalysisConfig::default(),
            simulate: SimulateSection::default(),
            search: SearchConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub kind: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Vocabulary sizes are taken from the dataset.
    pub network: NetworkConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            kind: LossKind::Ddn,
            epochs: 15,
            batch_size: 64,
            network: NetworkConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Experiment arms: model kinds (REG, MDN, DDN) or the baselines
    /// `oracle`, `random` and `empirical`.
    pub kinds: Vec<String>,
    /// UCB multipliers to sweep for every model kind; empty runs each kind
    /// once with `strategy.a`.
    pub a_values: Vec<f64>,
    pub strategy: StrategyConfig,
    pub experiment: ExperimentConfig,
    /// First day included in the per-run summary means.
    pub summary_from_day: i64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            kinds: vec!["REG".into(), "MDN".into(), "DDN".into()],
            a_values: Vec::new(),
            strategy: StrategyConfig::default(),
            experiment: ExperimentConfig::default(),
            summary_from_day: 30,
        }
    }
}

impl RunConfig {
    /// Reads a config file; missing fields take their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::config(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::config(format!("cannot serialize run config: {e}")))
    }

    /// The one seed of a single-replication command.
    pub fn single_seed(&self) -> Result<u64> {
        match self.seeds.as_slice() {
            [s] => Ok(*s),
            [] => Ok(0),
            _ => Err(Error::config(format!(
                "{} takes a single seed",
                self.command
            ))),
        }
    }

    /// `output_dir`, placed under `$DDN_OUTPUT_ROOT` when that is set and
    /// the path is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() && !root.is_empty() => {
                PathBuf::from(root).join(&self.output_dir)
            }
            _ => self.output_dir.clone(),
        }
    }

    /// Creates the output directory and writes this config into it.
    pub fn prepare_output(&self) -> Result<PathBuf> {
        let dir = self.resolved_output_dir();
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(RUN_CONFIG_FILE), self.to_toml()?)?;
        Ok(dir)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        self.simulate.strategy.validate()?;
        self.simulate.experiment.schedule.validate()?;
        if self.train.batch_size == 0 || self.analysis.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}
