//! The TOML run configuration shared by every subcommand.

use std::path::Path;

use blefp_core::features::{FeatureMethod, FeatureOptions};
use blefp_core::fleet::{DomainScenario, FleetSpec};
use blefp_core::ingest::CaptureSpec;
use blefp_core::GfskConfig;
use blefp_eval::ExperimentSpec;
use blefp_nn::NetworkConfig;
use serde::{Deserialize, Serialize};

use crate::exit::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub train_scenario: String,
    pub test_scenarios: Vec<String>,
    pub methods: Vec<FeatureMethod>,
    pub frames_per_device_train: usize,
    pub frames_per_device_test: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentSpec::desk(2);
        Self {
            train_scenario: d.train_scenario,
            test_scenarios: d.test_scenarios,
            methods: d.methods,
            frames_per_device_train: d.frames_per_device_train,
            frames_per_device_test: d.frames_per_device_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalabilitySection {
    pub device_counts: Vec<usize>,
}

impl Default for ScalabilitySection {
    fn default() -> Self {
        Self {
            device_counts: vec![6, 12, 18, 24, 31],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment seed: dataset generation and splits.
    pub seed: u64,
    pub gfsk: GfskConfig,
    pub fleet: FleetSpec,
    pub network: NetworkConfig,
    pub features: FeatureOptions,
    pub experiment: ExperimentSection,
    pub scalability: ScalabilitySection,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<DomainScenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capture: Option<CaptureSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fleet = FleetSpec::default();
        Self {
            seed: 2025,
            gfsk: GfskConfig::default(),
            network: NetworkConfig::desk(fleet.n_devices),
            fleet,
            features: FeatureOptions::default(),
            experiment: ExperimentSection::default(),
            scalability: ScalabilitySection::default(),
            scenarios: Vec::new(),
            capture: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn experiment_spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            fleet: self.fleet.clone(),
            gfsk: self.gfsk.clone(),
            train_scenario: self.experiment.train_scenario.clone(),
            test_scenarios: self.experiment.test_scenarios.clone(),
            methods: self.experiment.methods.clone(),
            nn_config: self.network.clone(),
            frames_per_device_train: self.experiment.frames_per_device_train,
            frames_per_device_test: self.experiment.frames_per_device_test,
            seed: self.seed,
            features: self.features,
            scenarios: self.scenarios.clone(),
        }
    }

    /// Checks every section that the subcommands consume.
    pub fn validate(&self) -> Result<(), CliError> {
        let spec = self.experiment_spec();
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(c) = &self.capture {
            c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[fleet]\nn_device = 3").is_err());
        let cfg: RunConfig = toml::from_str("seed = 9\n[fleet]\nn_devices = 4").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.fleet.n_devices, 4);
    }
}
