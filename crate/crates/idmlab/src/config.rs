//! Declarative run configuration: world generation settings, dataset split
//! fractions, and pipeline hyperparameters in one JSON document.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::synth::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Fraction of generated episodes assigned to the train split.
    pub train_fraction: f64,
    /// Fraction of episodes generated under the light camera regime.
    pub light_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { train_fraction: 0.75, light_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LabConfig {
    pub world: WorldConfig,
    pub dataset: DatasetConfig,
    pub pipeline: PipelineConfig,
}

impl LabConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.pipeline.validate()?;
        if !(0.0..=1.0).contains(&self.dataset.train_fraction)
            || !(0.0..=1.0).contains(&self.dataset.light_fraction)
        {
            return Err(Error::Config("dataset fractions must lie in [0,1]".into()));
        }
        if self.world.resolution != self.pipeline.encoder.resolution {
            return Err(Error::Config(format!(
                "world renders {}px frames but the encoder expects {}px",
                self.world.resolution, self.pipeline.encoder.resolution
            )));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<LabConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: LabConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

pub fn save_config(config: &LabConfig, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("config encode: {e}")))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips() {
        let mut config = LabConfig::default();
        config.world.resolution = config.pipeline.encoder.resolution;
        config.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        save_config(&config, &path).unwrap();
        assert_eq!(load_config(&path).unwrap(), config);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(
            &path,
            r#"{ "pipeline": { "seed": 42, "encoder": { "resolution": 128, "patch": 8, "channels": 32, "context_dim": 32 } }, "world": { "resolution": 128 } }"#,
        )
        .unwrap();
        let config = load_config(&path).unwrap();
        assert_eq!(config.pipeline.seed, 42);
        assert_eq!(config.world.canvas, 128);
    }

    #[test]
    fn resolution_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{ "world": { "resolution": 32 } }"#).unwrap();
        match load_config(&path) {
            Err(e) => assert_eq!(e.exit_code(), 2),
            Ok(_) => panic!("expected config error"),
        }
    }

    #[test]
    fn malformed_json_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_config(&path), Err(Error::Config(_))));
    }
}
