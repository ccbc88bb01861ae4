//! Versioned run configuration.
//!
//! One TOML file holds every section of an experiment plus a single global
//! seed. Component seeds are derived from it by name, never stored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkPlan;
use crate::datapipe::PipeConfig;
use crate::dualopt::{BudgetConfig, DualOptConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng;
use crate::simenv::EnvConfig;
use crate::trainer::TrainConfig;

pub const CONFIG_SCHEMA: &str = "coupondt-config-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    /// One subdirectory per model variant.
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/dataset.tsv".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSection {
    /// Budget of `optimize` as a fraction of `C_max`.
    pub budget_fraction: f64,
    /// Convergence band as a fraction of the budget.
    pub epsilon_fraction: f64,
    pub optimizer: DualOptConfig,
}

impl Default for DualSection {
    fn default() -> Self {
        Self {
            budget_fraction: 0.3,
            epsilon_fraction: BudgetConfig::EPSILON_FRACTION,
            optimizer: DualOptConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSection {
    pub n_repeats: usize,
    pub warmup: usize,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self { n_repeats: 100, warmup: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Must be present in every file.
    #[serde(default)]
    pub schema: String,
    pub seed: u64,
    pub paths: Paths,
    pub env: EnvConfig,
    pub pipe: PipeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dual: DualSection,
    pub bench: BenchmarkPlan,
    pub timing: TimingSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            seed: 42,
            paths: Paths::default(),
            env: EnvConfig::default(),
            pipe: PipeConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            dual: DualSection::default(),
            bench: BenchmarkPlan::default(),
            timing: TimingSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::Version { path: origin.into(), found: cfg.schema, expected: CONFIG_SCHEMA });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Copy with every component seed derived from the global seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.env.seed = rng::substream(self.seed, "env");
        c.pipe.seed = rng::substream(self.seed, "pipe");
        c.train.seed = rng::substream(self.seed, "train");
        c.dual.optimizer.seed = rng::substream(self.seed, "dual");
        c
    }

    /// Seed of the logging policy used to generate the dataset.
    pub fn logging_seed(&self) -> u64 {
        rng::substream(self.seed, "logging")
    }

    pub fn bench_seed(&self) -> u64 {
        rng::substream(self.seed, "bench")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.pipe.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.dual.optimizer.validate()?;
        self.bench.validate()?;
        if !(self.dual.budget_fraction >= 0.0 && self.dual.budget_fraction <= 1.0) {
            return Err(Error::Config(format!("dual.budget_fraction {} outside [0, 1]", self.dual.budget_fraction)));
        }
        if !(self.dual.epsilon_fraction > 0.0 && self.dual.epsilon_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dual.epsilon_fraction {} outside (0, 1]",
                self.dual.epsilon_fraction
            )));
        }
        if self.model.state_dim != self.env.feature_dim || self.model.n_actions != self.env.n_actions {
            return Err(Error::Config("model state_dim/n_actions must match the env section".into()));
        }
        if self.model.max_timestep < self.env.horizon {
            return Err(Error::Config("model.max_timestep is shorter than env.horizon".into()));
        }
        Ok(())
    }
}
