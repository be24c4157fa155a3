use somnet_core::{Hypnogram, PsgRecording, EPOCH_SECONDS};

use crate::access::AccessLog;
use crate::edf::parse_edf;
use crate::error::{DataError, Result};
use crate::hypnogram::{align_epochs, parse_hypnogram};
use crate::manifest::{CohortManifest, ManifestEntry};
use crate::montage::assemble_recording;

/// A recording with its annotation, both cut to the same whole-epoch span.
#[derive(Clone, Debug)]
pub struct LabeledRecording {
    pub recording: PsgRecording,
    pub hypnogram: Hypnogram,
}

pub fn load_entry(manifest: &CohortManifest, entry: &ManifestEntry, access: &AccessLog) -> Result<LabeledRecording> {
    let edf_path = manifest.resolve(&entry.edf);
    let edf = parse_edf(&access.read(&edf_path)?).map_err(|e| DataError::Manifest(format!("{}: {e}", edf_path.display())))?;
    let montage = manifest
        .montages
        .get(&entry.cohort)
        .ok_or_else(|| DataError::Manifest(format!("cohort {:?} has no montage", entry.cohort)))?;
    let mut recording = assemble_recording(&edf, montage, &entry.subject_id, &entry.cohort)?;

    let hyp_path = manifest.resolve(&entry.hypnogram);
    let mut hypnogram = parse_hypnogram(&access.read_to_string(&hyp_path)?, &manifest.stage_map)
        .map_err(|e| DataError::Hypnogram(format!("{}: {e}", hyp_path.display())))?;
    let recorded = (recording.duration() / EPOCH_SECONDS as f64 + 1e-9).floor() as usize;
    let kept = align_epochs(&mut hypnogram, recorded, &entry.subject_id);
    recording.truncate_seconds(kept * EPOCH_SECONDS);
    Ok(LabeledRecording { recording, hypnogram })
}
