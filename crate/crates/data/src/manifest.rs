//! Cohort manifest: recordings, annotation files, montages, the stage table
//! and (once split) the subject partition. Stored as JSON; paths are
//! relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, DataError, Result};
use crate::hypnogram::StageMap;
use crate::montage::Montage;
use crate::split::Split;

pub const MANIFEST_VERSION: u32 = 1;

fn current_version() -> u32 {
    MANIFEST_VERSION
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub cohort: String,
    pub edf: PathBuf,
    pub hypnogram: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    #[serde(default = "current_version")]
    pub version: u32,
    #[serde(default)]
    pub stage_map: StageMap,
    pub montages: BTreeMap<String, Montage>,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, Split>,
    #[serde(skip)]
    base: PathBuf,
}

impl CohortManifest {
    pub fn new(stage_map: StageMap, montages: BTreeMap<String, Montage>, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by(|a, b| a.edf.cmp(&b.edf));
        let m = Self { version: MANIFEST_VERSION, stage_map, montages, entries, splits: BTreeMap::new(), base: PathBuf::new() };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(DataError::Manifest(format!("unsupported version {}", self.version)));
        }
        if self.entries.is_empty() {
            return Err(DataError::Manifest("no entries".into()));
        }
        let mut home: BTreeMap<&str, &str> = BTreeMap::new();
        for e in &self.entries {
            if !self.montages.contains_key(&e.cohort) {
                return Err(DataError::Manifest(format!("cohort {:?} has no montage", e.cohort)));
            }
            if let Some(c) = home.insert(&e.subject_id, &e.cohort) {
                if c != e.cohort {
                    return Err(DataError::Manifest(format!("subject {:?} appears in cohorts {c:?} and {:?}", e.subject_id, e.cohort)));
                }
            }
        }
        if !self.splits.is_empty() {
            for s in home.keys() {
                if !self.splits.contains_key(*s) {
                    return Err(DataError::Manifest(format!("subject {s:?} has no split")));
                }
            }
            if self.splits.len() != home.len() {
                return Err(DataError::Manifest("split lists subjects absent from the entries".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
        m.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn with_base(mut self, base: impl Into<PathBuf>) -> Self {
        self.base = base.into();
        self
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn cohorts(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.cohort.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Unique subjects of `cohort`, sorted.
    pub fn subjects(&self, cohort: &str) -> Vec<String> {
        self.entries.iter().filter(|e| e.cohort == cohort).map(|e| e.subject_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn split_of(&self, subject: &str) -> Option<Split> {
        self.splits.get(subject).copied()
    }

    /// Entries of the given cohorts assigned to `split`, in manifest order.
    pub fn select(&self, cohorts: &[String], split: Split) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| cohorts.contains(&e.cohort) && self.split_of(&e.subject_id) == Some(split))
            .collect()
    }
}
