//! Digital Butterworth design through the analog zero/pole/gain route.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterKind {
    /// Pass band between two corners.
    Bandpass { low: f64, high: f64 },
    Highpass { corner: f64 },
    Lowpass { corner: f64 },
}

/// One biquad `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2]) / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Roots of the denominator.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1] / self.a[0], self.a[2] / self.a[0]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// A designed filter: cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    /// Order of the analog lowpass prototype.
    pub order: usize,
    pub fs: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    /// Number of poles of the realised digital filter.
    pub fn realized_order(&self) -> usize {
        self.sections.iter().map(|s| if s.a[2] == 0.0 { 1 } else { 2 }).sum()
    }

    /// Complex single-pass response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / self.fs);
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, freq: f64) -> f64 {
        self.response(freq).norm()
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(|s| s.poles().iter().all(|p| p.norm() < 1.0))
    }
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

fn prototype(order: usize) -> Zpk {
    let n = order as f64;
    let poles = (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n)))
        .collect();
    Zpk { zeros: Vec::new(), poles, gain: 1.0 }
}

fn product(values: &[Complex64]) -> Complex64 {
    values.iter().fold(Complex64::new(1.0, 0.0), |acc, &v| acc * v)
}

fn to_lowpass(p: Zpk, wo: f64) -> Zpk {
    let degree = (p.poles.len() - p.zeros.len()) as i32;
    Zpk {
        zeros: p.zeros.iter().map(|z| z * wo).collect(),
        poles: p.poles.iter().map(|q| q * wo).collect(),
        gain: p.gain * wo.powi(degree),
    }
}

fn to_highpass(p: Zpk, wo: f64) -> Zpk {
    let degree = p.poles.len() - p.zeros.len();
    let neg = |v: &[Complex64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    let ratio = product(&neg(&p.zeros)) / product(&neg(&p.poles));
    let mut zeros: Vec<Complex64> = p.zeros.iter().map(|z| wo / z).collect();
    zeros.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    Zpk { zeros, poles: p.poles.iter().map(|q| wo / q).collect(), gain: p.gain * ratio.re }
}

fn to_bandpass(p: Zpk, wo: f64, bw: f64) -> Zpk {
    let degree = p.poles.len() - p.zeros.len();
    let split = |v: &[Complex64]| {
        let mut out = Vec::with_capacity(2 * v.len());
        let scaled: Vec<Complex64> = v.iter().map(|x| x * (bw / 2.0)).collect();
        for s in &scaled {
            out.push(s + (s * s - wo * wo).sqrt());
        }
        for s in &scaled {
            out.push(s - (s * s - wo * wo).sqrt());
        }
        out
    };
    let mut zeros = split(&p.zeros);
    zeros.extend(std::iter::repeat(Complex64::new(0.0, 0.0)).take(degree));
    Zpk { zeros, poles: split(&p.poles), gain: p.gain * bw.powi(degree as i32) }
}

fn bilinear(p: Zpk, fs: f64) -> Zpk {
    let fs2 = 2.0 * fs;
    let degree = p.poles.len() - p.zeros.len();
    let map = |v: &[Complex64]| v.iter().map(|x| (fs2 + x) / (fs2 - x)).collect::<Vec<_>>();
    let mut zeros = map(&p.zeros);
    zeros.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(degree));
    let shift = |v: &[Complex64]| v.iter().map(|x| fs2 - x).collect::<Vec<_>>();
    let gain = p.gain * (product(&shift(&p.zeros)) / product(&shift(&p.poles))).re;
    Zpk { zeros, poles: map(&p.poles), gain }
}

/// Split roots into conjugate pairs (upper half-plane representative) and
/// real roots, each sorted for a reproducible section order.
fn pair_roots(roots: &[Complex64]) -> Vec<(Complex64, Option<Complex64>)> {
    const TOL: f64 = 1e-10;
    let mut complex: Vec<Complex64> = roots.iter().copied().filter(|r| r.im > TOL).collect();
    let mut real: Vec<f64> = roots.iter().filter(|r| r.im.abs() <= TOL).map(|r| r.re).collect();
    complex.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    real.sort_by(|a, b| b.total_cmp(a));
    let mut out: Vec<(Complex64, Option<Complex64>)> = complex.into_iter().map(|c| (c, Some(c.conj()))).collect();
    for pair in real.chunks(2) {
        let first = Complex64::new(pair[0], 0.0);
        out.push((first, pair.get(1).map(|&r| Complex64::new(r, 0.0))));
    }
    out
}

fn quadratic(pair: Option<&(Complex64, Option<Complex64>)>) -> [f64; 3] {
    match pair {
        None => [1.0, 0.0, 0.0],
        Some((r, None)) => [1.0, -r.re, 0.0],
        Some((r, Some(s))) => [1.0, -(r + s).re, (r * s).re],
    }
}

fn to_sections(p: Zpk) -> Vec<Biquad> {
    let pole_pairs = pair_roots(&p.poles);
    // zeros of a Butterworth design are all real (±1): hand them out in pairs
    // of opposite sign where possible so every section has unit-scale numerators
    let mut pos: Vec<Complex64> = p.zeros.iter().copied().filter(|z| z.re >= 0.0).collect();
    let mut neg: Vec<Complex64> = p.zeros.iter().copied().filter(|z| z.re < 0.0).collect();
    let mut zero_pairs = Vec::new();
    while !pos.is_empty() || !neg.is_empty() {
        let first = pos.pop().or_else(|| neg.pop()).unwrap();
        let second = neg.pop().or_else(|| pos.pop());
        zero_pairs.push((first, second));
    }
    let mut sections: Vec<Biquad> = pole_pairs
        .iter()
        .enumerate()
        .map(|(i, pp)| Biquad { b: quadratic(zero_pairs.get(i)), a: quadratic(Some(pp)) })
        .collect();
    if let Some(first) = sections.first_mut() {
        first.b.iter_mut().for_each(|b| *b *= p.gain);
    }
    sections
}

fn check_corner(f: f64, fs: f64) -> Result<()> {
    if !(f > 0.0 && f < fs / 2.0) {
        return Err(Error::InvalidArgument(format!("corner {f} Hz outside (0, {}) Hz", fs / 2.0)));
    }
    Ok(())
}

/// Digital Butterworth filter of prototype order `order`, with corner
/// frequencies pre-warped so the single-pass gain at each corner is −3 dB.
/// Band-pass designs realise `2 · order` poles.
pub fn design_butterworth(order: usize, kind: FilterKind, fs: f64) -> Result<FilterSpec> {
    if order == 0 {
        return Err(Error::InvalidArgument("filter order must be positive".into()));
    }
    if !(fs > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling rate {fs} Hz")));
    }
    let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
    let analog = match kind {
        FilterKind::Lowpass { corner } => {
            check_corner(corner, fs)?;
            to_lowpass(prototype(order), warp(corner))
        }
        FilterKind::Highpass { corner } => {
            check_corner(corner, fs)?;
            to_highpass(prototype(order), warp(corner))
        }
        FilterKind::Bandpass { low, high } => {
            check_corner(low, fs)?;
            check_corner(high, fs)?;
            if low >= high {
                return Err(Error::InvalidArgument(format!("band {low}–{high} Hz is empty")));
            }
            let (wl, wh) = (warp(low), warp(high));
            to_bandpass(prototype(order), (wl * wh).sqrt(), wh - wl)
        }
    };
    Ok(FilterSpec { kind, order, fs, sections: to_sections(bilinear(analog, fs)) })
}

/// The EEG/EOG conditioning filter: 0.5–35 Hz band-pass.
pub fn eeg_bandpass(fs: f64) -> Result<FilterSpec> {
    design_butterworth(4, FilterKind::Bandpass { low: 0.5, high: 35.0 }, fs)
}

/// The EMG conditioning filter: 10 Hz high-pass.
pub fn emg_highpass(fs: f64) -> Result<FilterSpec> {
    design_butterworth(4, FilterKind::Highpass { corner: 10.0 }, fs)
}
