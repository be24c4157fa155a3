//! Parameter tables for synthetic cohorts. Amplitudes are RMS in µV.

use serde::{Deserialize, Serialize};
use somnet_core::{Stage, NUM_STAGES};

use crate::error::{DataError, Result};

type Square = [[f64; NUM_STAGES]; NUM_STAGES];

fn check_rows(m: &Square, what: &str) -> Result<()> {
    for (i, row) in m.iter().enumerate() {
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Synth(format!("{what} row {i} is not a probability distribution")));
        }
    }
    Ok(())
}

/// Row-stochastic stage transition matrix over W, N1, N2, N3, REM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionMatrix(pub Square);

impl TransitionMatrix {
    /// Strong persistence; descent W→N1→N2→N3, REM entered from N2.
    pub fn sleep() -> Self {
        Self([
            [0.88, 0.10, 0.01, 0.00, 0.01],
            [0.05, 0.73, 0.20, 0.00, 0.02],
            [0.02, 0.03, 0.85, 0.06, 0.04],
            [0.01, 0.00, 0.07, 0.92, 0.00],
            [0.03, 0.04, 0.03, 0.00, 0.90],
        ])
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; NUM_STAGES]; NUM_STAGES];
        (0..NUM_STAGES).for_each(|i| m[i][i] = 1.0);
        Self(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_rows(&self.0, "transition")
    }
}

impl Default for TransitionMatrix {
    fn default() -> Self {
        Self::sleep()
    }
}

/// `0[i][j]`: probability that a true stage `i` is written as `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScorerBias(pub Square);

impl ScorerBias {
    pub fn none() -> Self {
        Self(TransitionMatrix::identity().0)
    }

    /// Relabel with probability `p`, spread evenly over the stages a scorer
    /// typically confuses with the true one.
    pub fn confusion(p: f64) -> Self {
        const NEIGHBOURS: [&[usize]; NUM_STAGES] = [&[1], &[0, 2, 4], &[1, 3], &[2], &[1, 2]];
        let mut m = [[0.0; NUM_STAGES]; NUM_STAGES];
        for (i, nb) in NEIGHBOURS.iter().enumerate() {
            m[i][i] = 1.0 - p;
            nb.iter().for_each(|&j| m[i][j] = p / nb.len() as f64);
        }
        Self(m)
    }

    pub fn validate(&self) -> Result<()> {
        check_rows(&self.0, "scorer bias")
    }
}

/// Stage-conditional content of the four derivations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSignature {
    /// EEG 0.5-2 Hz.
    pub delta: f64,
    /// EEG 4-7 Hz.
    pub theta: f64,
    /// EEG 8-12 Hz.
    pub alpha: f64,
    /// EEG 12-14 Hz.
    pub spindle: f64,
    /// Chin EMG tone.
    pub emg: f64,
    /// Eye movements per minute.
    pub eog_rate: f64,
}

/// EEG band edges in Hz, in [`StageSignature`] field order.
pub const EEG_BANDS: [(f64, f64); 4] = [(0.5, 2.0), (4.0, 7.0), (8.0, 12.0), (12.0, 14.0)];

impl StageSignature {
    pub fn bands(&self) -> [f64; 4] {
        [self.delta, self.theta, self.alpha, self.spindle]
    }
}

/// One signature per scored stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignatureTable(pub [StageSignature; NUM_STAGES]);

const fn sig(delta: f64, theta: f64, alpha: f64, spindle: f64, emg: f64, eog_rate: f64) -> StageSignature {
    StageSignature { delta, theta, alpha, spindle, emg, eog_rate }
}

impl SignatureTable {
    pub fn standard() -> Self {
        Self([
            sig(6.0, 5.0, 18.0, 3.0, 22.0, 30.0),
            sig(8.0, 16.0, 6.0, 3.0, 11.0, 8.0),
            sig(14.0, 9.0, 4.0, 12.0, 8.0, 1.0),
            sig(45.0, 8.0, 3.0, 4.0, 6.0, 0.5),
            sig(7.0, 14.0, 7.0, 2.0, 2.5, 25.0),
        ])
    }

    pub fn get(&self, stage: Stage) -> Option<&StageSignature> {
        stage.class().map(|k| &self.0[k])
    }

    /// Deep sleep is delta-dominated, wake alpha- and EMG-dominated, REM has
    /// the lowest EMG tone.
    pub fn validate(&self) -> Result<()> {
        let t = &self.0;
        let fail = |what: &str| Err(DataError::Synth(format!("signature table: {what}")));
        if t.iter().flat_map(|s| s.bands().into_iter().chain([s.emg, s.eog_rate])).any(|v| !(v >= 0.0 && v.is_finite())) {
            return fail("amplitudes must be finite and non-negative");
        }
        let n3 = t[3].bands();
        if n3[1..].iter().any(|&b| b >= n3[0]) {
            return fail("N3 delta must exceed every other N3 band");
        }
        let w = t[0].bands();
        if w.iter().enumerate().any(|(i, &b)| i != 2 && b >= w[2]) {
            return fail("W alpha must exceed every other W band");
        }
        if (1..NUM_STAGES).any(|k| t[k].emg >= t[0].emg) {
            return fail("W must have the highest EMG tone");
        }
        if (0..4).any(|k| t[k].emg <= t[4].emg) {
            return fail("REM must have the lowest EMG tone");
        }
        Ok(())
    }
}

impl Default for SignatureTable {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocabulary {
    /// W, N1, N2, N3, R.
    #[default]
    Aasm,
    /// W, S1, S2, S3/S4, R.
    Rk,
}

fn one() -> f64 {
    1.0
}

fn unit_gains() -> [f64; 4] {
    [1.0; 4]
}

fn fifty() -> f64 {
    50.0
}

/// Acquisition and scoring characteristics of one site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    /// Hz, for EEG and EOG (and EMG unless overridden).
    pub sample_rate: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emg_sample_rate: Option<u32>,
    /// Amplifier gain per derivation, in EEG, EOG-L, EOG-R, EMG order.
    pub amplitude_scale: [f64; 4],
    /// White noise SD on every derivation.
    pub noise_sd: f64,
    /// Mains interference amplitude; skipped when above Nyquist.
    pub line_noise: f64,
    #[serde(default = "fifty")]
    pub line_frequency: f64,
    pub scorer_bias: ScorerBias,
    #[serde(default)]
    pub vocabulary: Vocabulary,
    /// Files carry derivations ("C3-A2") instead of raw electrodes.
    #[serde(default)]
    pub prereferenced: bool,
    /// Fraction of epochs written as unscorable.
    #[serde(default)]
    pub unscored_rate: f64,
    /// Population differences in EEG band amplitude, in delta, theta, alpha,
    /// spindle order.
    #[serde(default = "unit_gains")]
    pub band_gain: [f64; 4],
    #[serde(default = "one")]
    pub emg_gain: f64,
}

const RATES: [u32; 5] = [100, 128, 200, 256, 512];

impl SiteProfile {
    /// Noise-free, bias-free site.
    pub fn clean(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            emg_sample_rate: None,
            amplitude_scale: [1.0; 4],
            noise_sd: 0.0,
            line_noise: 0.0,
            line_frequency: 50.0,
            scorer_bias: ScorerBias::none(),
            vocabulary: Vocabulary::Aasm,
            prereferenced: false,
            unscored_rate: 0.0,
            band_gain: [1.0; 4],
            emg_gain: 1.0,
        }
    }

    pub fn emg_rate(&self) -> u32 {
        self.emg_sample_rate.unwrap_or(self.sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        for fs in [self.sample_rate, self.emg_rate()] {
            if !RATES.contains(&fs) {
                return Err(DataError::Synth(format!("sampling rate {fs} Hz not in {RATES:?}")));
            }
        }
        if self.amplitude_scale.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(DataError::Synth("amplitude scale must be positive".into()));
        }
        let positive = self.band_gain.iter().chain([&self.emg_gain]).all(|g| *g > 0.0 && g.is_finite());
        if !positive || !(self.noise_sd >= 0.0) || !(self.line_noise >= 0.0) || !(self.line_frequency > 0.0) {
            return Err(DataError::Synth("gains must be positive and noise levels non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.unscored_rate) {
            return Err(DataError::Synth("unscored rate must lie in [0, 1)".into()));
        }
        self.scorer_bias.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TransitionMatrix::sleep().validate().unwrap();
        TransitionMatrix::identity().validate().unwrap();
        ScorerBias::confusion(0.1).validate().unwrap();
        SignatureTable::standard().validate().unwrap();
        SiteProfile::clean(128).validate().unwrap();
    }

    #[test]
    fn invalid_tables_rejected() {
        let mut t = SignatureTable::standard();
        t.0[4].emg = 30.0;
        assert!(t.validate().is_err());
        let mut b = ScorerBias::none();
        b.0[0][1] = 0.5;
        assert!(b.validate().is_err());
        let mut s = SiteProfile::clean(128);
        s.amplitude_scale[2] = 0.0;
        assert!(s.validate().is_err());
        assert!(SiteProfile::clean(250).validate().is_err());
    }
}
