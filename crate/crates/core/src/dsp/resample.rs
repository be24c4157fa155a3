//! Rational-rate polyphase resampling with a Kaiser-windowed sinc.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const KAISER_BETA: f64 = 5.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
pub const ROLLOFF: f64 = 0.9;
/// Half filter length in samples of the lower of the two rates.
pub const HALF_WIDTH: usize = 32;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Upsampling factor, downsampling factor and anti-alias taps for
/// `fs_in → fs_out`. Taps are scaled for unit pass-band gain after
/// zero-stuffing.
#[derive(Clone, Debug)]
pub struct Resampler {
    pub up: usize,
    pub down: usize,
    taps: Vec<f64>,
}

impl Resampler {
    pub fn new(fs_in: u32, fs_out: u32) -> Result<Self> {
        if fs_in == 0 || fs_out == 0 {
            return Err(Error::InvalidArgument(format!("sampling rates {fs_in} → {fs_out} Hz")));
        }
        let g = gcd(fs_in as u64, fs_out as u64);
        let (up, down) = ((fs_out as u64 / g) as usize, (fs_in as u64 / g) as usize);
        if up == 1 && down == 1 {
            return Ok(Self { up, down, taps: vec![1.0] });
        }
        let ratio = up.max(down);
        let half = HALF_WIDTH * ratio;
        let len = 2 * half + 1;
        let cutoff = ROLLOFF / (2.0 * ratio as f64);
        let norm = bessel_i0(KAISER_BETA);
        let mut taps: Vec<f64> = (0..len)
            .map(|i| {
                let t = i as f64 - half as f64;
                let sinc = if t == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * t).sin() / (PI * t) };
                let r = t / half as f64;
                sinc * bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|h| *h *= up as f64 / sum);
        Ok(Self { up, down, taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn output_len(&self, n: usize) -> usize {
        (n * self.up).div_ceil(self.down)
    }

    /// Resample; only the filter phase needed for each output sample is
    /// evaluated, so no zero-stuffed buffer is formed.
    pub fn apply<T: Real>(&self, x: &[T]) -> Vec<T> {
        if self.up == 1 && self.down == 1 {
            return x.to_vec();
        }
        let delay = (self.taps.len() - 1) / 2;
        let n_out = self.output_len(x.len());
        let mut out = Vec::with_capacity(n_out);
        for m in 0..n_out {
            // position on the upsampled grid, of which only every `up`-th is nonzero
            let t = m * self.down + delay;
            let mut acc = 0.0;
            let mut k = t % self.up;
            while k < self.taps.len() {
                let j = (t - k) / self.up;
                if j < x.len() {
                    acc += self.taps[k] * x[j].as_f64();
                }
                k += self.up;
            }
            out.push(T::lit(acc));
        }
        out
    }
}

/// Resample `x` from `fs_in` to `fs_out` Hz.
pub fn resample_polyphase<T: Real>(x: &[T], fs_in: u32, fs_out: u32) -> Result<Vec<T>> {
    Ok(Resampler::new(fs_in, fs_out)?.apply(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    fn central_rms_error(y: &[f64], freq: f64, fs: f64) -> f64 {
        let (lo, hi) = (y.len() / 10, y.len() - y.len() / 10);
        let ideal = tone(freq, fs, y.len());
        let sq: f64 = (lo..hi).map(|i| (y[i] - ideal[i]).powi(2)).sum();
        (sq / (hi - lo) as f64).sqrt() / 0.5f64.sqrt()
    }

    #[test]
    fn same_rate_is_identity() {
        let x: Vec<f32> = (0..50).map(|i| i as f32 * 0.1).collect();
        assert_eq!(resample_polyphase(&x, 128, 128).unwrap(), x);
    }

    #[test]
    fn length_arithmetic() {
        assert_eq!(resample_polyphase(&vec![0.0f64; 2560], 256, 128).unwrap().len(), 1280);
        assert_eq!(resample_polyphase(&vec![0.0f64; 101], 100, 128).unwrap().len(), 130);
        assert!(Resampler::new(0, 128).is_err());
    }

    #[test]
    fn five_hz_from_100_hz() {
        let y = resample_polyphase(&tone(5.0, 100.0, 1000), 100, 128).unwrap();
        assert_eq!(y.len(), 1280);
        assert!(central_rms_error(&y, 5.0, 128.0) < 0.01);
    }

    #[test]
    fn in_band_tones_survive_at_every_site_rate() {
        for fs in [100u32, 200, 256, 512] {
            let top = 0.4 * fs.min(128) as f64;
            for freq in [1.0, top / 2.0, top] {
                let y = resample_polyphase(&tone(freq, fs as f64, fs as usize * 20), fs, 128).unwrap();
                let e = central_rms_error(&y, freq, 128.0);
                assert!(e < 0.02, "{fs} Hz, tone {freq}: {e}");
            }
        }
    }

    #[test]
    fn downsampling_rejects_alias_band() {
        // 100 Hz at 512 Hz would alias to 28 Hz at 128 Hz
        let y = resample_polyphase(&tone(100.0, 512.0, 512 * 10), 512, 128).unwrap();
        let core = &y[200..y.len() - 200];
        let rms = (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt();
        assert!(rms < 0.01, "{rms}");
    }
}
