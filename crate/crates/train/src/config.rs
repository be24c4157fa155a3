use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use somnet_core::nn::AdamConfig;
use somnet_core::ModelConfig;

use crate::error::{io_err, Result, TrainError};

/// Training fractions of the data-volume experiment, in increasing order.
pub const FRACTIONS: [f64; 9] = [0.0025, 0.005, 0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.0];

/// Training passes per run.
pub const DEFAULT_PASSES: usize = 50;

pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Which part of the training partition a run sees. Validation always uses
/// the validation subsets of the same cohorts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Every cohort's training subset.
    #[default]
    All,
    /// The training subsets of the listed cohorts (one for LOCI, all but one
    /// for LOCO).
    Cohorts { cohorts: Vec<String> },
    /// A nested subject subsample of the mixed training partition.
    Fraction { fraction: f64 },
    /// `psgs` recordings drawn evenly across the listed cohorts.
    Combination { cohorts: Vec<String>, psgs: usize },
}

impl Selection {
    pub fn family(&self) -> &'static str {
        match self {
            Selection::All => "all",
            Selection::Cohorts { .. } => "cohorts",
            Selection::Fraction { .. } => "fraction",
            Selection::Combination { .. } => "combination",
        }
    }

    /// Cohorts contributing training and validation data.
    pub fn cohorts(&self, available: &[String]) -> Vec<String> {
        match self {
            Selection::Cohorts { cohorts } | Selection::Combination { cohorts, .. } => {
                available.iter().filter(|c| cohorts.contains(c)).cloned().collect()
            }
            _ => available.to_vec(),
        }
    }
}

fn default_passes() -> usize {
    DEFAULT_PASSES
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_cadence() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_passes")]
    pub passes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub selection: Selection,
    /// Validate every this many passes; the last pass is always validated.
    #[serde(default = "default_cadence")]
    pub validation_every: usize,
    /// Directory for preprocessed recordings; none disables caching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            batch_size: DEFAULT_BATCH_SIZE,
            passes: DEFAULT_PASSES,
            seed: 0,
            optimizer: AdamConfig::default(),
            selection: Selection::All,
            validation_every: 1,
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 || self.passes == 0 || self.validation_every == 0 {
            return bad("batch size, passes and validation cadence must be positive".into());
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return bad(format!("optimizer settings out of range: {o:?}"));
        }
        match &self.selection {
            Selection::Fraction { fraction } if !FRACTIONS.contains(fraction) => {
                bad(format!("fraction {fraction} is not one of {FRACTIONS:?}"))
            }
            Selection::Cohorts { cohorts } | Selection::Combination { cohorts, .. } if cohorts.is_empty() => {
                bad("cohort selection is empty".into())
            }
            Selection::Combination { psgs: 0, .. } => bad("combination draws no recordings".into()),
            _ => Ok(()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.passes, cfg.batch_size, cfg.optimizer.lr), (50, 32, 1e-4));
        assert_eq!((cfg.model.hidden, cfg.model.alpha), (1024, 10));
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let sparse: RunConfig = serde_json::from_str(r#"{"seed": 3, "selection": {"kind": "fraction", "fraction": 0.25}}"#).unwrap();
        assert_eq!(sparse.seed, 3);
        assert_eq!(sparse.selection.family(), "fraction");
    }

    #[test]
    fn fraction_must_be_on_the_grid() {
        let cfg = RunConfig { selection: Selection::Fraction { fraction: 0.3 }, ..Default::default() };
        assert!(cfg.validate().is_err());
        for f in FRACTIONS {
            RunConfig { selection: Selection::Fraction { fraction: f }, ..Default::default() }.validate().unwrap();
        }
        assert!(FRACTIONS.windows(2).all(|w| w[0] < w[1]));
    }
}
