//! Stage orchestration. Every stage reads its inputs from files and writes
//! its outputs into one directory, so any stage can be rerun alone.

mod crossval;
mod stages;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confdet::DetectConfig;
use crate::labeler::LabelConfig;
use crate::reactmodel::ModelConfig;
use crate::synthgen::ScenarioSpec;
use crate::trajstore::PreprocessConfig;
use crate::wmetrics::ScoreParams;

pub use crossval::{cross_validate, fold_assignment, predictions_to_eval, CvOutcome, FoldResult};
pub use stages::*;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Stage { .. } => 1,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl Fn(String) -> Self {
        move |message| Self::Stage { stage, message }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Equal-frequency bins per deviation dimension.
    pub n_bins: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self { n_bins: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub score: ScoreParams,
    /// Seconds around a RATP group in which a C1 prediction counts.
    pub critical_window_s: f64,
    pub folds: usize,
    pub fold_seed: u64,
    /// Subsampling steps listed in the prior report.
    pub prior_steps: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            score: ScoreParams::default(),
            critical_window_s: 70.0,
            folds: 5,
            fold_seed: 0,
            prior_steps: vec![1, 2, 4, 6, 8, 10],
        }
    }
}

/// Default input file names, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub surveillance: PathBuf,
    pub events: PathBuf,
    pub airports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            surveillance: "surveillance.csv".into(),
            events: "events.csv".into(),
            airports: "airports.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub evolution: EvolutionConfig,
    pub detect: DetectConfig,
    pub label: LabelConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub synth: ScenarioSpec,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Apply a global seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.model.seed = seed;
        self.eval.fold_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.detect.validate().map_err(|e| cfg(&e))?;
        self.label.validate().map_err(|e| cfg(&e))?;
        self.model.validate().map_err(|e| cfg(&e))?;
        self.synth.validate().map_err(|e| cfg(&e))?;
        if self.evolution.n_bins == 0 {
            return Err(PipelineError::Config("evolution.n_bins must be at least 1".into()));
        }
        if self.eval.score.n == 0 {
            return Err(PipelineError::Config("eval.score.n must be at least 1".into()));
        }
        if self.eval.folds < 2 {
            return Err(PipelineError::Config("eval.folds must be at least 2".into()));
        }
        if !(self.eval.critical_window_s >= 0.0) {
            return Err(PipelineError::Config("eval.critical_window_s must be non-negative".into()));
        }
        if self.eval.prior_steps.contains(&0) {
            return Err(PipelineError::Config("eval.prior_steps must be positive".into()));
        }
        if !(self.preprocess.max_gap_s > 0.0) {
            return Err(PipelineError::Config("preprocess.max_gap_s must be positive".into()));
        }
        Ok(())
    }
}

/// Write the effective configuration next to a stage's outputs.
pub fn echo_config(cfg: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Config(format!("{}: {e}", out.display())))?;
    let p = out.join(EFFECTIVE_CONFIG_FILE);
    std::fs::write(&p, cfg.to_toml()).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))
}

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = PipelineConfig::default().with_seed(42);
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn empty_config_is_all_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in ["[detect]\nbogus = 1\n", "[eval]\nfolds = 1\n", "[model]\nlearning_rate = -1.0\n"] {
            let e = PipelineConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
    }
}
