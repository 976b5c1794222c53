//! Run configuration: one struct covering the schedule, estimator,
//! optimizer, and data-split settings, loadable from a JSON file with
//! every field optional.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{build_schedule, DiffusionError, NoiseSchedule};
use crate::estimator::EstimatorConfig;
use crate::tensor::AdamConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub estimator: EstimatorConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub test_ratio: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_max: 50,
            beta_start: 0.0001,
            beta_end: 0.5,
            estimator: EstimatorConfig::default(),
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.001,
            train_ratio: 0.6,
            val_ratio: 0.2,
            test_ratio: 0.2,
        }
    }
}

impl RunConfig {
    pub fn from_json_reader<R: std::io::Read>(reader: R) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_reader(reader)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_json_reader(std::fs::File::open(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.t_max < 2 {
            return Err(ConfigError::Invalid("t_max must be at least 2".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(ConfigError::Invalid(
                "beta range must satisfy 0 < beta_start < beta_end < 1".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::Invalid("learning_rate must be positive".into()));
        }
        let sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if self.train_ratio <= 0.0
            || self.val_ratio < 0.0
            || self.test_ratio < 0.0
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(ConfigError::Invalid(
                "split ratios must be non-negative and sum to 1".into(),
            ));
        }
        self.estimator
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        build_schedule(self.t_max, self.beta_start, self.beta_end)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn split(&self) -> (f64, f64, f64) {
        (self.train_ratio, self.val_ratio, self.test_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let cfg = RunConfig::from_json_reader(r#"{"epochs": 7, "t_max": 10}"#.as_bytes()).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.t_max, 10);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.estimator.d_model, 16);
    }

    #[test]
    fn bad_values_are_rejected() {
        for json in [
            r#"{"t_max": 1}"#,
            r#"{"beta_start": 0.0}"#,
            r#"{"beta_start": 0.6, "beta_end": 0.5}"#,
            r#"{"epochs": 0}"#,
            r#"{"train_ratio": 0.5, "val_ratio": 0.5, "test_ratio": 0.5}"#,
        ] {
            assert!(
                RunConfig::from_json_reader(json.as_bytes()).is_err(),
                "accepted {json}"
            );
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig {
            epochs: 3,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
