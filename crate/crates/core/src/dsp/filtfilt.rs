use crate::dsp::butterworth::{Biquad, FilterSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Transposed direct-form II state of one section.
type State = [f64; 2];

fn run_section(s: &Biquad, state: &mut State, x: &mut [f64]) {
    let [b0, b1, b2] = s.b;
    let (a1, a2) = (s.a[1], s.a[2]);
    for v in x.iter_mut() {
        let input = *v;
        let y = b0 * input + state[0];
        state[0] = b1 * input - a1 * y + state[1];
        state[1] = b2 * input - a2 * y;
        *v = y;
    }
}

/// Per-section states that make the cascade's response to a unit step
/// start in steady state.
fn steady_state(sections: &[Biquad]) -> Vec<State> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let g = s.dc_gain();
            let z1 = s.b[2] - s.a[2] * g;
            let z0 = s.b[1] - s.a[1] * g + z1;
            let state = [z0 * scale, z1 * scale];
            scale *= g;
            state
        })
        .collect()
}

fn cascade(sections: &[Biquad], zi: &[State], x0: f64, x: &mut [f64]) {
    for (s, z) in sections.iter().zip(zi) {
        let mut state = [z[0] * x0, z[1] * x0];
        run_section(s, &mut state, x);
    }
}

/// Edge extension length used by [`zero_phase_filter`].
pub fn pad_length(f: &FilterSpec) -> usize {
    3 * (f.realized_order() + 1)
}

/// Forward-backward filtering with odd-reflection edge padding and
/// steady-state initial conditions. The effective response is `|H|²` with
/// zero phase; output length equals input length.
pub fn zero_phase_filter<T: Real>(x: &[T], f: &FilterSpec) -> Result<Vec<T>> {
    let pad = pad_length(f);
    if x.len() <= pad {
        return Err(Error::SignalTooShort { needed: pad + 1, got: x.len() });
    }
    let n = x.len();
    let xs: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * xs[0] - xs[i]));
    ext.extend_from_slice(&xs);
    ext.extend((1..=pad).map(|i| 2.0 * xs[n - 1] - xs[n - 1 - i]));

    let zi = steady_state(&f.sections);
    let first = ext[0];
    cascade(&f.sections, &zi, first, &mut ext);
    ext.reverse();
    let first = ext[0];
    cascade(&f.sections, &zi, first, &mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].iter().map(|&v| T::lit(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::butterworth::{eeg_bandpass, emg_highpass};
    use std::f64::consts::PI;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn zero_in_zero_out_and_length() {
        let f = eeg_bandpass(128.0).unwrap();
        let y = zero_phase_filter(&vec![0.0f64; 500], &f).unwrap();
        assert_eq!(y.len(), 500);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_short_signal() {
        let f = emg_highpass(128.0).unwrap();
        assert_eq!(pad_length(&f), 15);
        assert!(zero_phase_filter(&[0.0f32; 15], &f).is_err());
        assert!(zero_phase_filter(&[0.0f32; 16], &f).is_ok());
    }

    #[test]
    fn steady_state_start_has_no_transient_on_constant_highpass_input() {
        let f = eeg_bandpass(128.0).unwrap();
        let y = zero_phase_filter(&vec![3.0f64; 400], &f).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-9), "{:?}", &y[..5]);
    }

    #[test]
    fn midband_sine_passes_with_unit_gain() {
        let f = eeg_bandpass(128.0).unwrap();
        let x = sine(10.0, 128.0, 128 * 20);
        let y = zero_phase_filter(&x, &f).unwrap();
        let core = 128 * 5..128 * 15;
        let err = core.clone().map(|i| (y[i] - x[i]).abs()).fold(0.0, f64::max);
        assert!(err < 0.02, "{err}");
    }
}
