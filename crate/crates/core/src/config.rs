//! Pipeline configuration loaded from TOML. Every section is optional and
//! falls back to the compiled-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correction::CorrectionConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::picnn::CostTrainConfig;
use crate::pi::PiSampling;
use crate::trainers::{BcConfig, IqlConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub episodes: usize,
    pub pi: PiSampling,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { episodes: 100, pi: PiSampling::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub episodes: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub bc: BcConfig,
    pub iql: IqlConfig,
    pub cost: CostTrainConfig,
    pub correction: CorrectionConfig,
    pub evaluation: EvaluationConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.bc.validate()?;
        self.iql.validate()?;
        self.correction.validate()?;
        if self.dataset.episodes == 0 || self.evaluation.episodes == 0 {
            return Err(Error::Config("episode counts must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_override() {
        let cfg = PipelineConfig::from_toml_str("[iql]\nepochs = 5\ntau = 0.7\n[correction]\nmode = \"newton\"\n").unwrap();
        assert_eq!(cfg.iql.epochs, 5);
        assert_eq!(cfg.iql.tau, 0.7);
        assert_eq!(cfg.iql.gamma, IqlConfig::default().gamma);
        assert_eq!(cfg.correction.mode, crate::correction::CorrectionMode::Newton);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml_str("[iql]\nepochz = 5\n"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml_str("[iql]\ntau = 1.5\n").is_err());
    }
}
