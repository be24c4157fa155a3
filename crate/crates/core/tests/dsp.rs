use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use somnet_core::dsp::*;
use somnet_core::{Channel, ChannelRole, PsgRecording};

fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

/// Amplitude of the DFT bin nearest `freq`, for a record holding an integer
/// number of periods.
fn fft_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let bin = (freq * x.len() as f64 / fs).round() as usize;
    2.0 * buf[bin].norm() / x.len() as f64
}

fn xcorr_lag(a: &[f64], b: &[f64], max_lag: i64) -> i64 {
    let n = a.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 = (0..n)
                .filter(|&i| (0..n).contains(&(i + lag)))
                .map(|i| a[i as usize] * b[(i + lag) as usize])
                .sum();
            (lag, s)
        })
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap()
        .0
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn eeg_bandpass_zero_phase_and_unit_amplitude_at_10_hz() {
    let f = eeg_bandpass(128.0).unwrap();
    let x = sine(10.0, 128.0, 128 * 32);
    let y = zero_phase_filter(&x, &f).unwrap();
    assert_eq!(xcorr_lag(&x, &y, 20), 0);
    let core = 128 * 4..128 * 28;
    let amp = fft_amplitude(&y[core], 10.0, 128.0);
    assert!((amp - 1.0).abs() < 0.02, "{amp}");
}

#[test]
fn emg_highpass_removes_2_hz_tone() {
    let f = emg_highpass(128.0).unwrap();
    let x = sine(2.0, 128.0, 128 * 30);
    let y = zero_phase_filter(&x, &f).unwrap();
    let expected = f.magnitude(2.0).powi(2);
    let ratio = rms(&y[512..y.len() - 512]) / rms(&x);
    assert!(ratio < 0.05, "{ratio}");
    assert!((ratio - expected).abs() < 1e-3, "{ratio} vs |H|² {expected}");
}

#[test]
fn preprocess_attenuates_low_tone_on_emg() {
    let n = 128 * 120;
    let channels = ChannelRole::ORDER
        .iter()
        .map(|&role| Channel { role, sample_rate: 128, samples: sine(2.0, 128.0, n).iter().map(|v| v * 25.0).collect() })
        .collect();
    let rec = PsgRecording::new("s", "c", channels, 0.0).unwrap();
    // z-normalization hides the attenuation, so compare the recorded statistics
    let p = preprocess::<f64>(&rec).unwrap();
    let input_rms = 25.0 / 2f64.sqrt();
    assert!(p.stats[3].std / input_rms < 0.05, "{}", p.stats[3].std / input_rms);
    assert!((p.stats[0].std / input_rms - 1.0).abs() < 0.02);
}

#[test]
fn filtering_is_linear() {
    let f = eeg_bandpass(128.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (2.5, -0.75);
    let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    let lhs = zero_phase_filter(&mix, &f).unwrap();
    let fx = zero_phase_filter(&x, &f).unwrap();
    let fy = zero_phase_filter(&y, &f).unwrap();
    let scale = rms(&lhs);
    for i in 0..lhs.len() {
        assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale.max(1.0));
    }
}

#[test]
fn resampled_5_hz_sine_matches_closed_form() {
    let y = resample_polyphase(&sine(5.0, 100.0, 3000), 100, 128).unwrap();
    let ideal = sine(5.0, 128.0, y.len());
    let (lo, hi) = (y.len() / 10, y.len() * 9 / 10);
    let err: Vec<f64> = (lo..hi).map(|i| y[i] - ideal[i]).collect();
    assert!(rms(&err) / rms(&ideal[lo..hi]) < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn band_limited_probe_has_zero_lag(freq in 1.0f64..30.0, phase in 0.0f64..6.28, highpass in any::<bool>()) {
        let f = if highpass { emg_highpass(128.0).unwrap() } else { eeg_bandpass(128.0).unwrap() };
        let freq = if highpass { 12.0 + freq } else { freq };
        // windowed tone burst: band-limited and aperiodic over the lag range
        let n = 1024;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 128.0;
                let w = (-(((i as f64) - 512.0) / 150.0).powi(2)).exp();
                w * (2.0 * PI * freq * t + phase).sin()
            })
            .collect();
        let y = zero_phase_filter(&x, &f).unwrap();
        prop_assert_eq!(xcorr_lag(&x, &y, 10), 0);
    }

    #[test]
    fn zscore_output_matches_direct_oracle(xs in prop::collection::vec(-1e3f64..1e3, 3..200)) {
        let (z, s) = zscore_normalize(&xs, NORM_EPS);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!((s.mean - mean).abs() < 1e-9 * mean.abs().max(1.0));
        prop_assert!((s.std - std).abs() < 1e-9 * std.max(1.0));
        if std > 1e-6 {
            let m = moments(&z);
            prop_assert!(m.mean.abs() < 1e-9 && (m.std - 1.0).abs() < 1e-9);
            let (zz, _) = zscore_normalize(&z, NORM_EPS);
            prop_assert!(z.iter().zip(&zz).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn every_designed_section_is_stable(lo in 0.1f64..10.0, width in 1.0f64..40.0, fs in prop::sample::select(vec![100.0, 128.0, 256.0])) {
        let hi = (lo + width).min(fs / 2.0 - 1.0);
        prop_assume!(hi > lo);
        let f = design_butterworth(4, FilterKind::Bandpass { low: lo, high: hi }, fs).unwrap();
        prop_assert!(f.is_stable());
        prop_assert!((f.magnitude(lo) - 0.5f64.sqrt()).abs() < 1e-6);
        prop_assert!((f.magnitude(hi) - 0.5f64.sqrt()).abs() < 1e-6);
    }
}
