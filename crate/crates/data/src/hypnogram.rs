//! Annotation files: UTF-8 text with one stage token per 30-s epoch line.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use somnet_core::{Hypnogram, Stage};

use crate::error::{io_err, DataError, Result};

/// Token to stage table. Tokens not in the table map to `Unknown`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageMap(pub BTreeMap<String, Stage>);

impl StageMap {
    pub fn aasm() -> Self {
        Self::from_pairs(&[("W", Stage::W), ("N1", Stage::N1), ("N2", Stage::N2), ("N3", Stage::N3), ("R", Stage::Rem), ("REM", Stage::Rem)])
    }

    /// Rechtschaffen & Kales tokens, with S3 and S4 merged.
    pub fn rk() -> Self {
        Self::from_pairs(&[
            ("W", Stage::W),
            ("S1", Stage::N1),
            ("S2", Stage::N2),
            ("S3", Stage::N3),
            ("S4", Stage::N3),
            ("R", Stage::Rem),
            ("REM", Stage::Rem),
        ])
    }

    /// Union of both vocabularies.
    pub fn standard() -> Self {
        let mut m = Self::aasm();
        m.0.extend(Self::rk().0);
        m
    }

    fn from_pairs(pairs: &[(&str, Stage)]) -> Self {
        Self(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
    }

    pub fn map(&self, token: &str) -> Stage {
        self.0.get(token).copied().unwrap_or(Stage::Unknown)
    }
}

impl Default for StageMap {
    fn default() -> Self {
        Self::standard()
    }
}

pub fn parse_hypnogram(text: &str, map: &StageMap) -> Result<Hypnogram> {
    let stages: Vec<Stage> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|t| map.map(t)).collect();
    if stages.is_empty() {
        return Err(DataError::Hypnogram("no epochs".into()));
    }
    Ok(Hypnogram::new(stages))
}

pub fn load_hypnogram(path: &Path, map: &StageMap) -> Result<Hypnogram> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_hypnogram(&text, map).map_err(|e| DataError::Hypnogram(format!("{}: {e}", path.display())))
}

/// Render with canonical tokens, one per line.
pub fn format_hypnogram(h: &Hypnogram) -> String {
    let mut s = String::with_capacity(h.len() * 4);
    for st in &h.stages {
        s.push_str(st.as_str());
        s.push('\n');
    }
    s
}

/// Truncate the annotation to `epochs` recording epochs, or report how many
/// recording epochs to keep when the annotation is the shorter one.
pub fn align_epochs(h: &mut Hypnogram, epochs: usize, what: &str) -> usize {
    if h.len() != epochs {
        warn!("{what}: {} annotated epochs vs {epochs} recorded; keeping {}", h.len(), h.len().min(epochs));
    }
    h.truncate(epochs);
    h.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk_merges_deep_stages() {
        let h = parse_hypnogram("W\nS1\nS2\nS3\nS4\nR\n", &StageMap::rk()).unwrap();
        assert_eq!(h.stages, vec![Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::N3, Stage::Rem]);
    }

    #[test]
    fn aasm_is_identity_and_unknowns_flagged() {
        let h = parse_hypnogram("W\r\nN1\nN2\nN3\nR\nMOVEMENT\n\n", &StageMap::aasm()).unwrap();
        assert_eq!(h.stages, vec![Stage::W, Stage::N1, Stage::N2, Stage::N3, Stage::Rem, Stage::Unknown]);
        assert_eq!(h.targets()[5], None);
        assert!(parse_hypnogram("\n  \n", &StageMap::aasm()).is_err());
    }

    #[test]
    fn alignment_truncates_to_shorter() {
        let mut h = Hypnogram::new(vec![Stage::W; 10]);
        assert_eq!(align_epochs(&mut h, 8, "t"), 8);
        assert_eq!(h.len(), 8);
        assert_eq!(align_epochs(&mut h, 12, "t"), 8);
    }

    #[test]
    fn map_serializes_as_table() {
        let json = serde_json::to_string(&StageMap::rk()).unwrap();
        assert!(json.contains("\"S4\":\"N3\""));
        assert_eq!(serde_json::from_str::<StageMap>(&json).unwrap(), StageMap::rk());
    }
}
