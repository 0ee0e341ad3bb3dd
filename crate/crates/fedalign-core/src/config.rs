//! The experiment config file: model + data + FL protocol in one strict
//! JSON document. Unknown keys are rejected — silent hyperparameter typos
//! are the dominant failure mode of experiment harnesses.

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::server::FLConfig;

/// Full declarative description of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataConfig,
    pub fl: FLConfig,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.validate_shape()?;
        self.fl.validate()?;
        if self.data.num_clients != self.fl.num_clients {
            return Err(Error::InvalidConfig(format!(
                "data.num_clients ({}) != fl.num_clients ({})",
                self.data.num_clients, self.fl.num_clients
            )));
        }
        Ok(())
    }
}

impl DataConfig {
    /// Structural validation that tolerates a missing seed (the harness
    /// derives one from the master seed at run time).
    pub fn validate_shape(&self) -> Result<()> {
        let mut probe = self.clone();
        if probe.seed.is_none() {
            probe.seed = Some(0);
        }
        probe.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
      "model": {"kind": "linear-regression", "input_dim": 8, "output_dim": 1},
      "data": {
        "generator": "distinct-tasks",
        "num_clients": 4,
        "train_per_client": 300,
        "test_per_client": 200,
        "input_dim": 8,
        "noise_std": 0.05
      },
      "fl": {"algorithm": "pflalign", "master_seed": 1}
    }"#;

    #[test]
    fn parses_defaults_and_round_trips() {
        let cfg = ExperimentConfig::from_json_str(GOOD).unwrap();
        assert_eq!(cfg.fl.rounds, 50);
        assert_eq!(cfg.fl.num_clients, 4);
        assert_eq!(cfg.fl.local.local_steps, 5);
        assert_eq!(cfg.fl.local.batch_size, 4);
        assert_eq!(cfg.fl.local.lr, 4e-2);
        assert_eq!(cfg.fl.local.epsilon, 1e-12);
        assert_eq!(cfg.fl.participation, 1.0);

        let text = cfg.to_json_string().unwrap();
        let again = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let bad = GOOD.replace(
            "\"noise_std\": 0.05",
            "\"noise_std\": 0.05, \"lerning_rate\": 0.1",
        );
        let err = ExperimentConfig::from_json_str(&bad).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "error: {err}");
    }

    #[test]
    fn missing_algorithm_is_named() {
        let bad = GOOD.replace("\"algorithm\": \"pflalign\", ", "");
        let err = ExperimentConfig::from_json_str(&bad).unwrap_err();
        assert!(err.to_string().contains("algorithm"), "error: {err}");
    }

    #[test]
    fn client_count_mismatch_is_rejected() {
        let bad = GOOD.replace(
            "\"master_seed\": 1",
            "\"master_seed\": 1, \"num_clients\": 3",
        );
        let err = ExperimentConfig::from_json_str(&bad).unwrap_err();
        assert!(err.to_string().contains("num_clients"), "error: {err}");
    }
}
