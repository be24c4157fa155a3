//! Channel referencing and assembly of the four model inputs.

use serde::{Deserialize, Serialize};
use somnet_core::{Channel, ChannelRole, PsgRecording};

use crate::edf::{EdfFile, Signal};
use crate::error::{DataError, Result};

/// One derivation: `label` minus `reference`. A lead without a reference is
/// taken verbatim (already referenced in the file, e.g. "C3-A2").
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lead {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl Lead {
    pub fn referenced(label: &str, reference: &str) -> Self {
        Self { label: label.into(), reference: Some(reference.into()) }
    }

    pub fn verbatim(label: &str) -> Self {
        Self { label: label.into(), reference: None }
    }

    fn name(&self) -> String {
        match &self.reference {
            Some(r) => format!("{}-{r}", self.label),
            None => self.label.clone(),
        }
    }

    /// `None` when the file lacks one of the electrodes.
    pub fn derive(&self, edf: &EdfFile) -> Result<Option<Signal>> {
        let Some(primary) = edf.signal(&self.label) else { return Ok(None) };
        let Some(refname) = &self.reference else { return Ok(Some(primary)) };
        let Some(reference) = edf.signal(refname) else { return Ok(None) };
        let mut s = apply_reference(&primary, &reference)?;
        s.label = self.name();
        Ok(Some(s))
    }
}

/// Per-cohort electrode naming.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Montage {
    /// Central EEG candidates in preference order (C3 and/or C4 derivations).
    pub central: Vec<Lead>,
    pub eog_left: Lead,
    pub eog_right: Lead,
    pub emg: Lead,
}

impl Montage {
    /// Mastoid-referenced montage on raw electrodes.
    pub fn mastoid() -> Self {
        Self {
            central: vec![Lead::referenced("C3", "A2"), Lead::referenced("C4", "A1")],
            eog_left: Lead::referenced("LOC", "A2"),
            eog_right: Lead::referenced("ROC", "A1"),
            emg: Lead::referenced("Chin1", "Chin2"),
        }
    }

    /// Files that only carry already-referenced derivations.
    pub fn prereferenced() -> Self {
        Self {
            central: vec![Lead::verbatim("C3-A2"), Lead::verbatim("C4-A1")],
            eog_left: Lead::verbatim("LOC-A2"),
            eog_right: Lead::verbatim("ROC-A1"),
            emg: Lead::verbatim("Chin1-Chin2"),
        }
    }
}

/// Elementwise `primary - reference`.
pub fn apply_reference(primary: &Signal, reference: &Signal) -> Result<Signal> {
    if primary.samples.len() != reference.samples.len() || primary.sample_rate != reference.sample_rate {
        return Err(DataError::Montage(format!(
            "{} ({} samples @ {} Hz) cannot be referenced to {} ({} samples @ {} Hz)",
            primary.label,
            primary.samples.len(),
            primary.sample_rate,
            reference.label,
            reference.samples.len(),
            reference.sample_rate
        )));
    }
    Ok(Signal {
        label: primary.label.clone(),
        sample_rate: primary.sample_rate,
        samples: primary.samples.iter().zip(&reference.samples).map(|(a, b)| a - b).collect(),
    })
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Index of the candidate with the lowest total energy; the first listed
/// wins ties.
pub fn select_central_eeg(candidates: &[Signal]) -> Result<usize> {
    let first = candidates.first().ok_or_else(|| DataError::Montage("no central EEG candidates".into()))?;
    if candidates.iter().any(|c| c.samples.len() != first.samples.len()) {
        return Err(DataError::Montage("central EEG candidates differ in length".into()));
    }
    let mut best = (0, energy(&first.samples));
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let e = energy(&c.samples);
        if e < best.1 {
            best = (i, e);
        }
    }
    Ok(best.0)
}

fn as_channel(role: ChannelRole, s: Signal) -> Result<Channel> {
    let fs = s.sample_rate.round();
    if (s.sample_rate - fs).abs() > 1e-9 || fs < 1.0 {
        return Err(DataError::Montage(format!("{}: non-integer sampling rate {} Hz", s.label, s.sample_rate)));
    }
    Ok(Channel { role, sample_rate: fs as u32, samples: s.samples })
}

/// Pick, reference and order the four model inputs of one EDF.
pub fn assemble_recording(edf: &EdfFile, montage: &Montage, subject_id: &str, cohort: &str) -> Result<PsgRecording> {
    let mut candidates = Vec::new();
    for lead in &montage.central {
        if let Some(s) = lead.derive(edf)? {
            candidates.push(s);
        }
    }
    if candidates.is_empty() {
        let tried: Vec<String> = montage.central.iter().map(Lead::name).collect();
        return Err(DataError::Montage(format!("{subject_id}: none of the central derivations {tried:?} is present")));
    }
    let eeg = candidates.swap_remove(select_central_eeg(&candidates)?);
    let need = |lead: &Lead| -> Result<Signal> {
        lead.derive(edf)?.ok_or_else(|| DataError::Montage(format!("{subject_id}: missing {}", lead.name())))
    };
    let channels = vec![
        as_channel(ChannelRole::Eeg, eeg)?,
        as_channel(ChannelRole::EogLeft, need(&montage.eog_left)?)?,
        as_channel(ChannelRole::EogRight, need(&montage.eog_right)?)?,
        as_channel(ChannelRole::Emg, need(&montage.emg)?)?,
    ];
    Ok(PsgRecording::new(subject_id, cohort, channels, edf.header.record_duration)?)
}
