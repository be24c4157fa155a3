use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::generate_hypnogram_with;
use super::profile::{ScorerBias, SignatureTable, SiteProfile, TransitionMatrix, Vocabulary};
use super::signal::{generate_recording, SyntheticRecording};
use crate::edf::write_edf;
use crate::error::{io_err, DataError, Result};
use crate::hypnogram::StageMap;
use crate::manifest::{CohortManifest, ManifestEntry};
use crate::montage::Montage;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub name: String,
    pub subjects: usize,
    /// Inclusive range of epochs per recording.
    pub epochs: [usize; 2],
    #[serde(default = "one")]
    pub recordings_per_subject: usize,
    pub site: SiteProfile,
}

/// Cohort battery description, stored as JSON next to the generated files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub cohorts: Vec<CohortSpec>,
    #[serde(default)]
    pub transitions: TransitionMatrix,
    #[serde(default)]
    pub signatures: SignatureTable,
}

pub const SPEC_FILE: &str = "cohort_spec.json";
pub const MANIFEST_FILE: &str = "manifest.json";

impl SynthSpec {
    /// Five sites standing in for the ISRUC, MrOS, SHHS, SSC and WSC roles.
    pub fn default_battery(subjects: usize, epochs: [usize; 2]) -> Self {
        let site = |sample_rate, emg: Option<u32>, scale, noise, line, hz, bias, vocab, preref, unscored, band_gain, emg_gain| SiteProfile {
            sample_rate,
            emg_sample_rate: emg,
            amplitude_scale: scale,
            noise_sd: noise,
            line_noise: line,
            line_frequency: hz,
            scorer_bias: ScorerBias::confusion(bias),
            vocabulary: vocab,
            prereferenced: preref,
            unscored_rate: unscored,
            band_gain,
            emg_gain,
        };
        let cohort = |name: &str, site| CohortSpec { name: name.into(), subjects, epochs, recordings_per_subject: 1, site };
        Self {
            cohorts: vec![
                cohort("ISRUC", site(200, None, [1.0, 1.0, 1.0, 1.0], 2.0, 3.0, 50.0, 0.03, Vocabulary::Aasm, false, 0.0, [1.0, 1.0, 1.0, 1.0], 1.0)),
                cohort("MrOS", site(256, Some(512), [0.8, 1.2, 1.2, 0.7], 3.0, 5.0, 60.0, 0.05, Vocabulary::Rk, false, 0.01, [0.7, 1.0, 0.9, 0.8], 0.8)),
                cohort("SHHS", site(128, None, [1.5, 1.0, 1.0, 1.3], 4.0, 2.0, 60.0, 0.05, Vocabulary::Rk, true, 0.01, [0.9, 1.1, 1.0, 1.0], 1.2)),
                cohort("SSC", site(100, None, [0.6, 0.9, 0.9, 1.1], 2.0, 4.0, 60.0, 0.04, Vocabulary::Aasm, false, 0.0, [1.2, 0.9, 1.1, 1.1], 1.0)),
                cohort("WSC", site(512, None, [1.1, 0.8, 0.8, 0.9], 3.0, 6.0, 60.0, 0.04, Vocabulary::Aasm, true, 0.0, [1.0, 1.2, 0.8, 0.9], 0.9)),
            ],
            transitions: TransitionMatrix::sleep(),
            signatures: SignatureTable::standard(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cohorts.is_empty() {
            return Err(DataError::Synth("no cohorts".into()));
        }
        self.transitions.validate()?;
        self.signatures.validate()?;
        let mut names: Vec<&str> = Vec::new();
        for c in &self.cohorts {
            let plain = !c.name.is_empty() && c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_');
            if !plain || names.contains(&c.name.as_str()) {
                return Err(DataError::Synth(format!("cohort name {:?} must be unique and alphanumeric", c.name)));
            }
            names.push(&c.name);
            if c.subjects == 0 || c.recordings_per_subject == 0 || c.epochs[0] == 0 || c.epochs[0] > c.epochs[1] {
                return Err(DataError::Synth(format!("cohort {:?}: empty subject, recording or epoch range", c.name)));
            }
            c.site.validate().map_err(|e| DataError::Synth(format!("cohort {:?}: {e}", c.name)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| DataError::Synth(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(io_err(path))
    }
}

/// Independent stream for one (cohort, subject, recording) triple.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    // SplitMix64 finaliser over the sequence
    parts.iter().fold(seed ^ 0x9E37_79B9_7F4A_7C15, |h, &p| {
        let mut z = h.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

struct Job {
    entry: ManifestEntry,
    cohort: usize,
    seed: u64,
}

/// One subject-night of `spec`, without touching the filesystem.
pub fn synthesize(spec: &SynthSpec, cohort: usize, subject_id: &str, seed: u64) -> Result<SyntheticRecording> {
    let c = &spec.cohorts[cohort];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = rng.random_range(c.epochs[0]..=c.epochs[1]);
    let hyp = generate_hypnogram_with(epochs, &spec.transitions, &mut rng);
    generate_recording(&hyp, &spec.signatures, &c.site, subject_id, &c.name, rng.random())
}

/// Write every cohort's EDFs and annotations under `out_dir`, plus the spec
/// and a manifest. Subjects are generated in parallel; output is
/// independent of scheduling.
pub fn generate_cohorts(spec: &SynthSpec, out_dir: &Path, seed: u64) -> Result<CohortManifest> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for (ci, c) in spec.cohorts.iter().enumerate() {
        std::fs::create_dir_all(out_dir.join(&c.name)).map_err(io_err(out_dir.join(&c.name)))?;
        for s in 0..c.subjects {
            let subject_id = format!("{}-{:03}", c.name, s + 1);
            for r in 0..c.recordings_per_subject {
                let stem = if c.recordings_per_subject == 1 { subject_id.clone() } else { format!("{subject_id}-n{}", r + 1) };
                let entry = ManifestEntry {
                    subject_id: subject_id.clone(),
                    cohort: c.name.clone(),
                    edf: PathBuf::from(&c.name).join(format!("{stem}.edf")),
                    hypnogram: PathBuf::from(&c.name).join(format!("{stem}.txt")),
                };
                jobs.push(Job { entry, cohort: ci, seed: derive_seed(seed, &[ci as u64, s as u64, r as u64]) });
            }
        }
    }

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(jobs.len()).max(1);
    let chunk = jobs.len().div_ceil(workers);
    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || -> Result<()> {
                    for job in part {
                        let rec = synthesize(spec, job.cohort, &job.entry.subject_id, job.seed)?;
                        let edf_path = out_dir.join(&job.entry.edf);
                        std::fs::write(&edf_path, write_edf(&rec.edf)?).map_err(io_err(&edf_path))?;
                        let hyp_path = out_dir.join(&job.entry.hypnogram);
                        std::fs::write(&hyp_path, &rec.annotation).map_err(io_err(&hyp_path))?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("generator thread panicked"))
    })?;

    let montages: BTreeMap<String, Montage> = spec
        .cohorts
        .iter()
        .map(|c| (c.name.clone(), if c.site.prereferenced { Montage::prereferenced() } else { Montage::mastoid() }))
        .collect();
    let manifest = CohortManifest::new(StageMap::standard(), montages, jobs.into_iter().map(|j| j.entry).collect())?
        .with_base(out_dir);
    spec.save(&out_dir.join(SPEC_FILE))?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
