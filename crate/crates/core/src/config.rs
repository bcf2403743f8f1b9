//! Versioned TOML pipeline configuration.
//!
//! ```toml
//! version = 1
//! seed = 7
//! level = "nr"
//! segment_frames = 120
//!
//! [norm]
//! max_frame_width = 3840.0
//!
//! [base]
//! n_trees = 300
//! ```

use crate::forest::{mix64, ForestParams};
use crate::model::{Level, TrainOptions};
use crate::synth::SynthConfig;
use crate::trace::NormConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub version: u32,
    /// Global seed; mixed into every forest seed and the synthetic
    /// generator.
    pub seed: u64,
    pub level: Level,
    /// Frames per segment; unset scores the whole trace as one segment.
    pub segment_frames: Option<usize>,
    pub norm: NormConfig,
    pub base: ForestParams,
    pub residual: ForestParams,
    pub base_qp: bool,
    pub single_stage: bool,
    pub external_columns: Vec<String>,
    pub folds: usize,
    pub reps: usize,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        PipelineConfig {
            version: CONFIG_VERSION,
            seed: 0,
            level: t.level,
            segment_frames: None,
            norm: NormConfig::default(),
            base: t.base,
            residual: t.residual,
            base_qp: t.base_qp,
            single_stage: t.single_stage,
            external_columns: Vec::new(),
            folds: 5,
            reps: 20,
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::VersionMismatch { found: cfg.version, expected: CONFIG_VERSION });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.norm.validate().map_err(ConfigError::Invalid)?;
        if self.segment_frames == Some(0) {
            return Err(ConfigError::Invalid("segment_frames must be at least 1".into()));
        }
        if self.folds < 2 || self.reps == 0 {
            return Err(ConfigError::Invalid("folds must be at least 2 and reps at least 1".into()));
        }
        self.synth.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// Training options with forest seeds mixed with the global seed.
    pub fn train_options(&self) -> TrainOptions {
        let mut base = self.base.clone();
        let mut residual = self.residual.clone();
        base.seed = mix64(self.seed ^ mix64(base.seed));
        residual.seed = mix64(self.seed ^ mix64(residual.seed));
        TrainOptions {
            level: self.level,
            base_qp: self.base_qp,
            single_stage: self.single_stage,
            external_columns: self.external_columns.clone(),
            base,
            residual,
            norm_config: self.norm,
        }
    }
}
