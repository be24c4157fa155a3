use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use somnet_core::dsp::preprocess;
use somnet_core::{ChannelRole, Hypnogram, PsgRecording, Stage};
use somnet_data::synth::{
    generate_cohorts, generate_hypnogram_with, generate_recording, SignatureTable, SiteProfile, SynthSpec, SyntheticRecording,
    TransitionMatrix, EEG_BANDS,
};
use somnet_data::{assemble_recording, Montage};

fn recording(site: &SiteProfile, hyp: &Hypnogram, seed: u64) -> (SyntheticRecording, PsgRecording) {
    let rec = generate_recording(hyp, &SignatureTable::standard(), site, "S-001", "T", seed).unwrap();
    let montage = if site.prereferenced { Montage::prereferenced() } else { Montage::mastoid() };
    let psg = assemble_recording(&rec.edf, &montage, "S-001", "T").unwrap();
    (rec, psg)
}

fn cycle(per_stage: usize, rounds: usize) -> Hypnogram {
    Hypnogram::new((0..rounds).flat_map(|_| Stage::SCORED.iter().flat_map(move |s| std::iter::repeat_n(*s, per_stage))).collect())
}

fn epoch(x: &[f64], fs: u32, e: usize) -> &[f64] {
    let n = 30 * fs as usize;
    &x[e * n..(e + 1) * n]
}

fn band_powers(x: &[f64], fs: f64, bands: &[(f64, f64)]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    bands
        .iter()
        .map(|&(lo, hi)| (1..n / 2).filter(|&k| (lo..=hi).contains(&(k as f64 * fs / n as f64))).map(|k| buf[k].norm_sqr()).sum())
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn noisy_site() -> SiteProfile {
    SynthSpec::default_battery(1, [1, 1]).cohorts[1].site.clone()
}

#[test]
fn transition_frequencies_follow_the_matrix() {
    let tm = TransitionMatrix::sleep();
    let h = generate_hypnogram_with(100_000, &tm, &mut ChaCha8Rng::seed_from_u64(1));
    let mut counts = [[0usize; 5]; 5];
    for w in h.stages.windows(2) {
        counts[w[0].class().unwrap()][w[1].class().unwrap()] += 1;
    }
    for i in 0..5 {
        let row: usize = counts[i].iter().sum();
        for j in 0..5 {
            let f = counts[i][j] as f64 / row as f64;
            assert!((f - tm.0[i][j]).abs() < 0.02, "{i}->{j}: {f} vs {}", tm.0[i][j]);
        }
    }
}

#[test]
fn deep_sleep_is_delta_dominated() {
    let (_, psg) = recording(&noisy_site(), &cycle(2, 2), 3);
    let eeg = psg.channel(ChannelRole::Eeg);
    let hyp = cycle(2, 2);
    for (e, s) in hyp.stages.iter().enumerate().filter(|(_, s)| **s == Stage::N3) {
        let p = band_powers(epoch(&eeg.samples, eeg.sample_rate, e), eeg.sample_rate as f64, &[EEG_BANDS[0], EEG_BANDS[2]]);
        let db = 10.0 * (p[0] / p[1]).log10();
        assert!(db >= 6.0, "{s} epoch {e}: delta over alpha {db:.1} dB");
    }
}

#[test]
fn rem_has_the_lowest_chin_tone() {
    let hyp = cycle(3, 3);
    let (_, psg) = recording(&noisy_site(), &hyp, 8);
    let emg = psg.channel(ChannelRole::Emg);
    let levels: Vec<(Stage, f64)> =
        hyp.stages.iter().enumerate().map(|(e, s)| (*s, rms(epoch(&emg.samples, emg.sample_rate, e)))).collect();
    let rem_max = levels.iter().filter(|(s, _)| *s == Stage::Rem).map(|l| l.1).fold(0.0, f64::max);
    let other_min = levels.iter().filter(|(s, _)| *s != Stage::Rem).map(|l| l.1).fold(f64::MAX, f64::min);
    assert!(rem_max < other_min, "{rem_max} vs {other_min}");
}

#[test]
fn amplitude_scale_cancels_in_normalization() {
    let hyp = cycle(2, 1);
    let base = SiteProfile { noise_sd: 2.0, line_noise: 0.0, ..SiteProfile::clean(200) };
    let loud = SiteProfile { amplitude_scale: [3.0; 4], ..base.clone() };
    let (_, a) = recording(&base, &hyp, 5);
    let (_, b) = recording(&loud, &hyp, 5);
    for role in ChannelRole::ORDER {
        let (x, y) = (&a.channel(role).samples, &b.channel(role).samples);
        let ratio = (rms(y) / rms(x)).powi(2);
        assert!((ratio - 9.0).abs() < 9.0 * 1e-3, "{role}: variance ratio {ratio}");
    }
    let (pa, pb) = (preprocess::<f64>(&a).unwrap(), preprocess::<f64>(&b).unwrap());
    for c in 0..4 {
        let (sa, sb) = (pa.stats[c], pb.stats[c]);
        assert!((sb.std / sa.std - 3.0).abs() < 3e-3);
        let worst = pa.channel(c).iter().zip(pb.channel(c)).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-2, "channel {c}: {worst}");
    }
}

fn features(psg: &PsgRecording, e: usize) -> Vec<f64> {
    let eeg = psg.channel(ChannelRole::Eeg);
    let mut f: Vec<f64> =
        band_powers(epoch(&eeg.samples, eeg.sample_rate, e), eeg.sample_rate as f64, &EEG_BANDS).iter().map(|p| p.ln()).collect();
    let emg = psg.channel(ChannelRole::Emg);
    f.push(rms(epoch(&emg.samples, emg.sample_rate, e)).ln());
    let (l, r) = (psg.channel(ChannelRole::EogLeft), psg.channel(ChannelRole::EogRight));
    let diff: Vec<f64> = epoch(&l.samples, l.sample_rate, e).iter().zip(epoch(&r.samples, r.sample_rate, e)).map(|(a, b)| a - b).collect();
    f.push(rms(&diff).ln());
    f
}

#[test]
fn band_power_centroids_separate_clean_stages() {
    let site = SiteProfile::clean(128);
    let hyp = cycle(4, 2);
    let labeled = |seed| {
        let (rec, psg) = recording(&site, &hyp, seed);
        (0..hyp.len()).map(|e| (rec.clean.stages[e].class().unwrap(), features(&psg, e))).collect::<Vec<_>>()
    };
    let train: Vec<_> = (0..3).flat_map(labeled).collect();
    let test: Vec<_> = (10..13).flat_map(labeled).collect();
    let dim = train[0].1.len();
    let mean: Vec<f64> = (0..dim).map(|d| train.iter().map(|t| t.1[d]).sum::<f64>() / train.len() as f64).collect();
    let sd: Vec<f64> =
        (0..dim).map(|d| (train.iter().map(|t| (t.1[d] - mean[d]).powi(2)).sum::<f64>() / train.len() as f64).sqrt()).collect();
    let z = |f: &[f64]| -> Vec<f64> { (0..dim).map(|d| (f[d] - mean[d]) / sd[d]).collect() };
    let centroids: Vec<Vec<f64>> = (0..5)
        .map(|k| {
            let members: Vec<Vec<f64>> = train.iter().filter(|t| t.0 == k).map(|t| z(&t.1)).collect();
            (0..dim).map(|d| members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64).collect()
        })
        .collect();
    let hits = test
        .iter()
        .filter(|(k, f)| {
            let zf = z(f);
            let dist = |c: &Vec<f64>| c.iter().zip(&zf).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            (0..5).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap() == *k
        })
        .count();
    let acc = hits as f64 / test.len() as f64;
    assert!(acc >= 0.9, "nearest-centroid accuracy {acc}");
}

#[test]
fn scorer_bias_only_touches_the_written_annotation() {
    let site = SiteProfile { scorer_bias: somnet_data::synth::ScorerBias::confusion(0.5), ..SiteProfile::clean(128) };
    let hyp = cycle(10, 2);
    let (rec, _) = recording(&site, &hyp, 1);
    assert_eq!(rec.clean, hyp);
    let changed = rec.scored.stages.iter().zip(&hyp.stages).filter(|(a, b)| a != b).count();
    assert!(changed > 20 && changed < 80, "{changed}");
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_seed_gives_byte_identical_cohorts() {
    let spec = SynthSpec::default_battery(2, [2, 3]);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = generate_cohorts(&spec, a.path(), 42).unwrap();
    generate_cohorts(&spec, b.path(), 42).unwrap();
    generate_cohorts(&spec, c.path(), 43).unwrap();
    assert_eq!(m.entries.len(), 10);
    let (ta, tb, tc) = (tree(a.path()), tree(b.path()), tree(c.path()));
    assert_eq!(ta.len(), 2 * 10 + 2);
    assert!(ta == tb);
    assert!(ta != tc);
}

#[test]
fn five_by_twenty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_cohorts(&SynthSpec::default_battery(20, [1, 1]), dir.path(), 1).unwrap();
    assert_eq!(m.entries.len(), 100);
    assert_eq!(m.cohorts().len(), 5);
}
