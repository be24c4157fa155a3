//! Stage-conditioned synthesis of one recording.

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use somnet_core::{Hypnogram, Stage, EPOCH_SECONDS};

use super::chain::draw;
use super::profile::{SignatureTable, SiteProfile, Vocabulary, EEG_BANDS};
use crate::edf::{EdfFile, SignalSpec};
use crate::error::Result;
use crate::hypnogram::{parse_hypnogram, StageMap};

/// Broadband EEG floor present in every stage.
const BACKGROUND: (f64, f64, f64) = (0.5, 30.0, 3.0);
/// Per-epoch multiplicative jitter of every amplitude.
const JITTER: f64 = 0.15;
/// Per-subject lognormal SD of the overall EEG amplitude.
const SUBJECT_SPREAD: f64 = 0.1;
/// Share of the cortical signal picked up by the EOG electrodes.
const EOG_LEAK: f64 = 0.3;
/// Range of the extra noise on one of the two central electrodes.
const ELECTRODE_ARTIFACT: (f64, f64) = (2.0, 10.0);
/// Eye-movement size range (µV) and time constants (s).
const SACCADE_SIZE: (f64, f64) = (40.0, 100.0);
const SACCADE_RISE: f64 = 0.04;
const SACCADE_DECAY: f64 = 0.8;
/// Mastoid and chin reference electrode activity (band Hz, RMS µV).
const MASTOID: (f64, f64, f64) = (0.3, 20.0, 10.0);
const CHIN_REFERENCE: (f64, f64, f64) = (1.0, 40.0, 5.0);
const RECORD_SECONDS: f64 = 1.0;

/// Generated recording plus the annotations before and after scorer bias.
#[derive(Clone, Debug)]
pub struct SyntheticRecording {
    pub edf: EdfFile,
    pub clean: Hypnogram,
    /// Annotation text as written, one token per epoch.
    pub annotation: String,
    /// `annotation` read back through the standard stage table.
    pub scored: Hypnogram,
}

struct NoiseBank {
    planner: FftPlanner<f64>,
}

impl NoiseBank {
    fn plans(&mut self, n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
        (self.planner.plan_fft_forward(n), self.planner.plan_fft_inverse(n))
    }

    /// Unit-RMS Gaussian noise with all power inside `[lo, hi]` Hz.
    fn band(&mut self, n: usize, fs: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
        let (fwd, inv) = self.plans(n);
        let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
        fwd.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let f = k.min(n - k) as f64 * fs / n as f64;
            if f < lo || f > hi {
                *c = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if rms > 0.0 {
            x.iter_mut().for_each(|v| *v /= rms);
        }
        x
    }
}

fn epoch_envelope(levels: &[f64], per_epoch: usize) -> impl Fn(usize) -> f64 + '_ {
    move |i| levels[i / per_epoch]
}

fn jittered(base: f64, rng: &mut impl Rng) -> f64 {
    base * (1.0 + JITTER * rng.random_range(-1.0..1.0))
}

/// Conjugate eye movements: smoothed steps that relax back to baseline.
fn eye_movements(stages: &[Stage], rates: &[f64], fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let per_epoch = EPOCH_SECONDS * fs as usize;
    let mut x = vec![0.0; stages.len() * per_epoch];
    let span = (5.0 * SACCADE_DECAY * fs) as usize;
    for (e, rate) in rates.iter().enumerate() {
        let lambda = rate * EPOCH_SECONDS as f64 / 60.0;
        let count = if lambda > 0.0 { Poisson::new(lambda).unwrap().sample(rng) as usize } else { 0 };
        for _ in 0..count {
            let start = e * per_epoch + rng.random_range(0..per_epoch);
            let size = rng.random_range(SACCADE_SIZE.0..SACCADE_SIZE.1) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let end = (start + span).min(x.len());
            for (k, v) in x[start..end].iter_mut().enumerate() {
                let t = k as f64 / fs;
                *v += size * (1.0 - (-t / SACCADE_RISE).exp()) * (-t / SACCADE_DECAY).exp();
            }
        }
    }
    x
}

fn token(stage: Stage, vocab: Vocabulary, rng: &mut impl Rng) -> &'static str {
    match (vocab, stage) {
        (_, Stage::W) => "W",
        (_, Stage::Rem) => "R",
        (Vocabulary::Aasm, s) => s.as_str(),
        (Vocabulary::Rk, Stage::N1) => "S1",
        (Vocabulary::Rk, Stage::N2) => "S2",
        (Vocabulary::Rk, Stage::N3) => {
            if rng.random_bool(0.5) {
                "S4"
            } else {
                "S3"
            }
        }
        (Vocabulary::Rk, Stage::Unknown) => "UNKNOWN",
    }
}

fn calibrated(label: &str, fs: u32, x: &[f64]) -> (SignalSpec, Vec<i16>) {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bound = (peak * 1.1).ceil().max(1.0);
    let spec = SignalSpec {
        label: label.into(),
        transducer: "synthetic".into(),
        physical_dimension: "uV".into(),
        physical_min: -bound,
        physical_max: bound,
        digital_min: i16::MIN as i32,
        digital_max: i16::MAX as i32,
        prefiltering: format!("LP:{}Hz", (0.45 * fs as f64).round()),
        samples_per_record: (fs as f64 * RECORD_SECONDS) as usize,
        reserved: String::new(),
    };
    let digital = x.iter().map(|&v| spec.to_digital(v)).collect();
    (spec, digital)
}

fn start_time(seed: u64) -> NaiveDateTime {
    let day = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap() + chrono::Days::new(seed % 3650);
    day.and_hms_opt(22, (seed % 60) as u32, 0).unwrap()
}

/// Synthesise the EDF and annotation of one night with the given true
/// hypnogram. Deterministic in `seed`.
pub fn generate_recording(
    hypnogram: &Hypnogram,
    signatures: &SignatureTable,
    site: &SiteProfile,
    subject_id: &str,
    cohort: &str,
    seed: u64,
) -> Result<SyntheticRecording> {
    site.validate()?;
    signatures.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = NoiseBank { planner: FftPlanner::new() };
    let stages = &hypnogram.stages;
    let epochs = stages.len();
    let sig = |s: Stage| signatures.get(s).copied().unwrap_or(signatures.0[0]);

    let fs = site.sample_rate as f64;
    let per_epoch = EPOCH_SECONDS * site.sample_rate as usize;
    let n = epochs * per_epoch;
    let subject_gain = (SUBJECT_SPREAD * rng.sample::<f64, _>(StandardNormal)).exp();

    let (bg_lo, bg_hi, bg_rms) = BACKGROUND;
    let mut cortex: Vec<f64> = bank.band(n, fs, bg_lo, bg_hi, &mut rng).into_iter().map(|v| v * bg_rms).collect();
    for (b, &(lo, hi)) in EEG_BANDS.iter().enumerate() {
        let levels: Vec<f64> =
            stages.iter().map(|&s| jittered(sig(s).bands()[b] * site.band_gain[b] * subject_gain, &mut rng)).collect();
        let env = epoch_envelope(&levels, per_epoch);
        let noise = bank.band(n, fs, lo, hi, &mut rng);
        cortex.iter_mut().zip(noise).enumerate().for_each(|(i, (c, v))| *c += env(i) * v);
    }

    // one central electrode carries extra noise; energy-based selection should avoid it
    let noisy = rng.random_range(0..2);
    let artifact = rng.random_range(ELECTRODE_ARTIFACT.0..ELECTRODE_ARTIFACT.1);
    let extra = bank.band(n, fs, 0.5, 0.45 * fs, &mut rng);
    let central: Vec<Vec<f64>> = (0..2)
        .map(|e| if e == noisy { cortex.iter().zip(&extra).map(|(c, a)| c + artifact * a).collect() } else { cortex.clone() })
        .collect();

    let rates: Vec<f64> = stages.iter().map(|&s| jittered(sig(s).eog_rate, &mut rng)).collect();
    let eye = eye_movements(stages, &rates, fs, &mut rng);
    let eog_left: Vec<f64> = eye.iter().zip(&cortex).map(|(e, c)| e + EOG_LEAK * c).collect();
    let eog_right: Vec<f64> = eye.iter().zip(&cortex).map(|(e, c)| -e + EOG_LEAK * c).collect();

    let fs_m = site.emg_rate() as f64;
    let per_epoch_m = EPOCH_SECONDS * site.emg_rate() as usize;
    let n_m = epochs * per_epoch_m;
    let tone: Vec<f64> = stages.iter().map(|&s| jittered(sig(s).emg * site.emg_gain, &mut rng)).collect();
    let env = epoch_envelope(&tone, per_epoch_m);
    let emg: Vec<f64> = bank.band(n_m, fs_m, 10.0, (0.45 * fs_m).min(100.0), &mut rng).into_iter().enumerate().map(|(i, v)| env(i) * v).collect();

    // amplifier chain: site noise and mains, then the per-derivation gain
    let white = Normal::new(0.0, site.noise_sd.max(f64::MIN_POSITIVE)).unwrap();
    let acquire = |clean: Vec<f64>, rate: f64, scale: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let phase = rng.random_range(0.0..2.0 * PI);
        let mains = if site.line_frequency < rate / 2.0 { site.line_noise } else { 0.0 };
        clean
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let hum = mains * (2.0 * PI * site.line_frequency * i as f64 / rate + phase).sin();
                let w = if site.noise_sd > 0.0 { white.sample(rng) } else { 0.0 };
                scale * (v + w + hum)
            })
            .collect()
    };
    let [s_eeg, s_eogl, s_eogr, s_emg] = site.amplitude_scale;
    let [c3, c4]: [Vec<f64>; 2] = central.try_into().unwrap();
    let c3 = acquire(c3, fs, s_eeg, &mut rng);
    let c4 = acquire(c4, fs, s_eeg, &mut rng);
    let loc = acquire(eog_left, fs, s_eogl, &mut rng);
    let roc = acquire(eog_right, fs, s_eogr, &mut rng);
    let chin = acquire(emg, fs_m, s_emg, &mut rng);

    let (rate_e, rate_m) = (site.sample_rate, site.emg_rate());
    let signals: Vec<(String, u32, Vec<f64>)> = if site.prereferenced {
        vec![
            ("C3-A2".into(), rate_e, c3),
            ("C4-A1".into(), rate_e, c4),
            ("LOC-A2".into(), rate_e, loc),
            ("ROC-A1".into(), rate_e, roc),
            ("Chin1-Chin2".into(), rate_m, chin),
        ]
    } else {
        let (lo, hi, rms) = MASTOID;
        let a1: Vec<f64> = bank.band(n, fs, lo, hi, &mut rng).into_iter().map(|v| v * rms).collect();
        let a2: Vec<f64> = bank.band(n, fs, lo, hi, &mut rng).into_iter().map(|v| v * rms).collect();
        let (lo, hi, rms) = CHIN_REFERENCE;
        let chin2: Vec<f64> = bank.band(n_m, fs_m, lo, hi.min(0.45 * fs_m), &mut rng).into_iter().map(|v| v * rms).collect();
        let plus = |x: Vec<f64>, r: &[f64]| -> Vec<f64> { x.into_iter().zip(r).map(|(a, b)| a + b).collect() };
        vec![
            ("C3".into(), rate_e, plus(c3, &a2)),
            ("C4".into(), rate_e, plus(c4, &a1)),
            ("LOC".into(), rate_e, plus(loc, &a2)),
            ("ROC".into(), rate_e, plus(roc, &a1)),
            ("Chin1".into(), rate_m, plus(chin, &chin2)),
            ("A1".into(), rate_e, a1),
            ("A2".into(), rate_e, a2),
            ("Chin2".into(), rate_m, chin2),
        ]
    };
    let (specs, payload): (Vec<SignalSpec>, Vec<Vec<i16>>) = signals.iter().map(|(l, r, x)| calibrated(l, *r, x)).unzip();
    let edf = EdfFile::new(subject_id, &format!("{cohort} synthetic"), start_time(seed), RECORD_SECONDS, specs, payload)?;

    let mut annotation = String::with_capacity(epochs * 4);
    for &s in stages {
        let k = s.class().unwrap_or(0);
        let written = Stage::SCORED[draw(&site.scorer_bias.0[k], &mut rng)];
        let t = if rng.random_bool(site.unscored_rate) { "MOVEMENT" } else { token(written, site.vocabulary, &mut rng) };
        annotation.push_str(t);
        annotation.push('\n');
    }
    let scored = parse_hypnogram(&annotation, &StageMap::standard())?;
    Ok(SyntheticRecording { edf, clean: hypnogram.clone(), annotation, scored })
}
