//! Run configuration shared by every pipeline command.

use crate::byol::ByolConfig;
use crate::mel::MelConfig;
use crate::metrics::CostConfig;
use crate::quality::QualityConfig;
use crate::screen::HeadConfig;
use crate::select::SelectionConfig;
use crate::synth::CorpusConfig;
use crate::tabular::ClassifierConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Generator settings for `synth`.
    pub synth: CorpusConfig,
}

/// Every section defaults; only `seed` is required. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub io: IoConfig,
    #[serde(default)]
    pub quality: QualityConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub classifiers: ClassifierConfig,
    #[serde(default)]
    pub mel: MelConfig,
    #[serde(default)]
    pub ssl: ByolConfig,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub metrics: CostConfig,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            io: IoConfig::default(),
            quality: QualityConfig::default(),
            selection: SelectionConfig::default(),
            classifiers: ClassifierConfig::default(),
            mel: MelConfig::default(),
            ssl: ByolConfig::default(),
            head: HeadConfig::default(),
            metrics: CostConfig::default(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.mel.validate().map_err(|e| inv(&e))?;
        self.ssl.validate().map_err(|e| inv(&e))?;
        self.head.validate().map_err(|e| inv(&e))?;
        self.metrics.validate().map_err(|e| inv(&e))?;
        let q = &self.quality;
        if !(q.test_fraction > 0.0 && q.test_fraction < 1.0) {
            return Err(ConfigError::Invalid("quality.test_fraction must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&q.decision_threshold) {
            return Err(ConfigError::Invalid("quality.decision_threshold must be in [0, 1]".into()));
        }
        if !(self.selection.keep_fraction > 0.0 && self.selection.keep_fraction <= 1.0) || self.selection.n_bins < 2 {
            return Err(ConfigError::Invalid("selection needs keep_fraction in (0, 1] and n_bins >= 2".into()));
        }
        Ok(())
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
