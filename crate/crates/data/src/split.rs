//! Subject-disjoint train/validation/test partition, 87.5/2.5/10 per cohort.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::manifest::CohortManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// (train, val, test) subject counts. Validation and test take the floor
/// of 2.5% and 10% (at least one each); training keeps the remainder.
pub fn split_sizes(n: usize) -> Result<(usize, usize, usize)> {
    if n < 3 {
        return Err(DataError::Split(format!("{n} subjects cannot fill three subsets")));
    }
    let val = (n * 25 / 1000).max(1);
    let test = (n * 100 / 1000).max(1);
    Ok((n - val - test, val, test))
}

/// Assign every subject of every cohort to one subset, sampling without
/// replacement. Deterministic in `seed`.
pub fn split_cohort(manifest: &CohortManifest, seed: u64) -> Result<CohortManifest> {
    let mut out = manifest.clone();
    out.splits.clear();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for cohort in manifest.cohorts() {
        let mut subjects = manifest.subjects(&cohort);
        let (_, val, test) = split_sizes(subjects.len()).map_err(|e| DataError::Split(format!("cohort {cohort:?}: {e}")))?;
        subjects.shuffle(&mut rng);
        for (i, s) in subjects.into_iter().enumerate() {
            let split = if i < val {
                Split::Val
            } else if i < val + test {
                Split::Test
            } else {
                Split::Train
            };
            out.splits.insert(s, split);
        }
    }
    out.validate()?;
    Ok(out)
}
