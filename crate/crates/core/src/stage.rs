use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of scored sleep stages.
pub const NUM_STAGES: usize = 5;

/// Seconds per scoring epoch.
pub const EPOCH_SECONDS: usize = 30;

/// Stage label of one 30-s epoch. `Unknown` marks unscored epochs, which
/// stay in the signal stream but are excluded from loss and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    W,
    N1,
    N2,
    N3,
    #[serde(rename = "REM")]
    Rem,
    #[serde(rename = "UNKNOWN")]
    Unknown,
}

impl Stage {
    pub const SCORED: [Stage; NUM_STAGES] = [Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem];

    /// Class index in `0..NUM_STAGES`, `None` for unscored epochs.
    pub fn class(self) -> Option<usize> {
        match self {
            Stage::W => Some(0),
            Stage::N1 => Some(1),
            Stage::N2 => Some(2),
            Stage::N3 => Some(3),
            Stage::Rem => Some(4),
            Stage::Unknown => None,
        }
    }

    pub fn from_class(k: usize) -> Option<Stage> {
        Self::SCORED.get(k).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::W => "W",
            Stage::N1 => "N1",
            Stage::N2 => "N2",
            Stage::N3 => "N3",
            Stage::Rem => "REM",
            Stage::Unknown => "UNKNOWN",
        }
    }

    /// Canonical token parse; anything unrecognised is `Unknown`.
    pub fn parse(token: &str) -> Stage {
        match token {
            "W" => Stage::W,
            "N1" => Stage::N1,
            "N2" => Stage::N2,
            "N3" => Stage::N3,
            "REM" | "R" => Stage::Rem,
            _ => Stage::Unknown,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-epoch stage sequence of one recording.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypnogram {
    pub stages: Vec<Stage>,
}

impl Hypnogram {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn unknown_count(&self) -> usize {
        self.stages.iter().filter(|s| **s == Stage::Unknown).count()
    }

    pub fn truncate(&mut self, epochs: usize) {
        self.stages.truncate(epochs);
    }

    /// Class targets per epoch (`None` where unscored).
    pub fn targets(&self) -> Vec<Option<usize>> {
        self.stages.iter().map(|s| s.class()).collect()
    }
}
