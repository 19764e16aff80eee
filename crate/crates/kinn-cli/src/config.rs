//! Experiment configuration file: strict JSON (unknown keys rejected) wiring
//! the dataset, model, and training sections together.

use std::path::Path;

use serde::{Deserialize, Serialize};

use kinn_core::error::{Error, Result};
use kinn_core::model::OperatorConfig;
use kinn_core::poisson::PoissonConfig;
use kinn_core::sequence::{ForecastTrainConfig, ForecasterConfig, SequenceConfig};
use kinn_core::train::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSection {
    Poisson(PoissonConfig),
    Sequence(SequenceConfig),
}

fn default_horizon() -> usize {
    40
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    /// Autoregressive evaluation horizon.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self { horizon: default_horizon() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: Option<OperatorConfig>,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    #[serde(default)]
    pub forecaster: Option<ForecasterConfig>,
    #[serde(default)]
    pub forecast_training: Option<ForecastTrainConfig>,
    #[serde(default)]
    pub rollout: Option<RolloutSection>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSection::Poisson(p) => p.validate()?,
            DatasetSection::Sequence(s) => s.validate()?,
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if let (DatasetSection::Sequence(s), Some(f)) = (&self.dataset, &self.forecaster) {
            f.validate()?;
            if f.channels != s.channels() {
                return Err(Error::Config(format!(
                    "forecaster channels {} do not match sequence channels {}",
                    f.channels,
                    s.channels()
                )));
            }
        }
        Ok(())
    }

    /// Route every RNG seed to one value (the `--seed` override).
    pub fn override_seed(&mut self, seed: u64) {
        match &mut self.dataset {
            DatasetSection::Poisson(p) => p.seed = seed,
            DatasetSection::Sequence(s) => s.seed = seed,
        }
        if let Some(t) = &mut self.training {
            t.seed = seed;
        }
        if let Some(t) = &mut self.forecast_training {
            t.seed = seed;
        }
    }

    pub fn poisson(&self) -> Result<&PoissonConfig> {
        match &self.dataset {
            DatasetSection::Poisson(p) => Ok(p),
            _ => Err(Error::Config("this command needs a poisson dataset section".into())),
        }
    }

    pub fn sequence(&self) -> Result<&SequenceConfig> {
        match &self.dataset {
            DatasetSection::Sequence(s) => Ok(s),
            _ => Err(Error::Config("this command needs a sequence dataset section".into())),
        }
    }

    pub fn model_section(&self) -> Result<&OperatorConfig> {
        self.model.as_ref().ok_or_else(|| Error::Config("missing `model` section".into()))
    }

    pub fn training_section(&self) -> Result<&TrainConfig> {
        self.training.as_ref().ok_or_else(|| Error::Config("missing `training` section".into()))
    }

    pub fn forecaster_section(&self) -> Result<&ForecasterConfig> {
        self.forecaster
            .as_ref()
            .ok_or_else(|| Error::Config("missing `forecaster` section".into()))
    }

    pub fn forecast_training_section(&self) -> Result<ForecastTrainConfig> {
        Ok(self
            .forecast_training
            .unwrap_or_else(|| ForecastTrainConfig::demo(self.seed())))
    }

    pub fn seed(&self) -> u64 {
        match &self.dataset {
            DatasetSection::Poisson(p) => p.seed,
            DatasetSection::Sequence(s) => s.seed,
        }
    }
}
