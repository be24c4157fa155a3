//! Bidirectional gated recurrent unit.
//!
//! Cell, with gates stacked as `[z; r; n]` in every weight matrix:
//!
//! ```text
//! z  = σ(Wz·x + Uz·h + bz)
//! r  = σ(Wr·x + Ur·h + br)
//! n  = tanh(Wn·x + Un·(r ⊙ h) + bn)
//! h' = z ⊙ h + (1 − z) ⊙ n
//! ```
//!
//! The reset gate multiplies the hidden state before the recurrent matrix
//! of the candidate.

use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::{axpy, dot, gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Parameters of one direction: `w_input: [3H, F]`, `w_hidden: [3H, H]`,
/// `bias: [3H]`.
#[derive(Clone, Copy, Debug)]
pub struct GruDirection {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

impl GruDirection {
    fn vars(&self) -> [Var; 3] {
        [self.w_input, self.w_hidden, self.bias]
    }
}

/// Per-step activations of one direction over one sequence, each `[T, H]`.
struct Trace<T> {
    h_prev: Vec<T>,
    z: Vec<T>,
    r: Vec<T>,
    n: Vec<T>,
    rh: Vec<T>,
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn time_order(steps: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    }
}

/// Run one direction over `x: [F, T]`; returns hidden states `[T, H]`.
fn run_direction<T: Real>(
    x: &[T],
    features: usize,
    steps: usize,
    hidden: usize,
    wx: &[T],
    wh: &[T],
    bias: &[T],
    reverse: bool,
) -> (Vec<T>, Trace<T>) {
    let g3 = 3 * hidden;
    let mut xp = vec![T::zero(); steps * g3];
    gemm(steps, features, g3, MatRef::transposed(x, steps), MatRef::transposed(wx, features), &mut xp, false);
    for row in xp.chunks_mut(g3) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let mut trace = Trace {
        h_prev: vec![T::zero(); steps * hidden],
        z: vec![T::zero(); steps * hidden],
        r: vec![T::zero(); steps * hidden],
        n: vec![T::zero(); steps * hidden],
        rh: vec![T::zero(); steps * hidden],
    };
    let mut states = vec![T::zero(); steps * hidden];
    let mut h = vec![T::zero(); hidden];
    for t in time_order(steps, reverse) {
        let pre = &xp[t * g3..(t + 1) * g3];
        let span = t * hidden..(t + 1) * hidden;
        trace.h_prev[span.clone()].copy_from_slice(&h);
        for i in 0..hidden {
            trace.z[t * hidden + i] = sigmoid(pre[i] + dot(&wh[i * hidden..(i + 1) * hidden], &h));
            let r = sigmoid(pre[hidden + i] + dot(&wh[(hidden + i) * hidden..(hidden + i + 1) * hidden], &h));
            trace.r[t * hidden + i] = r;
            trace.rh[t * hidden + i] = r * h[i];
        }
        let rh = &trace.rh[span.clone()];
        for i in 0..hidden {
            let row = &wh[(2 * hidden + i) * hidden..(2 * hidden + i + 1) * hidden];
            trace.n[t * hidden + i] = (pre[2 * hidden + i] + dot(row, rh)).tanh();
        }
        for i in 0..hidden {
            let z = trace.z[t * hidden + i];
            h[i] = z * h[i] + (T::one() - z) * trace.n[t * hidden + i];
        }
        states[span].copy_from_slice(&h);
    }
    (states, trace)
}

struct GruBackward<T> {
    x: Var,
    dirs: [GruDirection; 2],
    /// `traces[b * 2 + d]`
    traces: Vec<Trace<T>>,
    batch: usize,
    features: usize,
    steps: usize,
    hidden: usize,
}

impl<T: Real> Backward<T> for GruBackward<T> {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x];
        for d in &self.dirs {
            v.extend(d.vars());
        }
        v
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let (f, steps, hd) = (self.features, self.steps, self.hidden);
        let g3 = 3 * hd;
        let x = ctx.value(self.x).data();
        let need_x = ctx.requires_grad(self.x);
        let mut dx = if need_x { vec![T::zero(); x.len()] } else { Vec::new() };
        for (d, dir) in self.dirs.iter().enumerate() {
            let wx = ctx.value(dir.w_input).data();
            let wh = ctx.value(dir.w_hidden).data();
            let mut dwx = vec![T::zero(); g3 * f];
            let mut dwh = vec![T::zero(); g3 * hd];
            let mut db = vec![T::zero(); g3];
            let mut da = vec![T::zero(); steps * g3];
            let mut carry = vec![T::zero(); hd];
            let mut dh_prev = vec![T::zero(); hd];
            let mut drh = vec![T::zero(); hd];
            for b in 0..self.batch {
                let tr = &self.traces[b * 2 + d];
                let gy = &grad_out[(b * 2 * hd + d * hd) * steps..(b * 2 * hd + (d + 1) * hd) * steps];
                carry.iter_mut().for_each(|v| *v = T::zero());
                // reverse of the processing order
                for t in time_order(steps, d == 0) {
                    let o = t * hd;
                    let row = &mut da[t * g3..(t + 1) * g3];
                    drh.iter_mut().for_each(|v| *v = T::zero());
                    for i in 0..hd {
                        let dh = gy[i * steps + t] + carry[i];
                        let (z, n, hp) = (tr.z[o + i], tr.n[o + i], tr.h_prev[o + i]);
                        dh_prev[i] = dh * z;
                        let dan = dh * (T::one() - z) * (T::one() - n * n);
                        row[2 * hd + i] = dan;
                        row[i] = dh * (hp - n) * z * (T::one() - z);
                    }
                    for i in 0..hd {
                        let row_w = &wh[(2 * hd + i) * hd..(2 * hd + i + 1) * hd];
                        axpy(row[2 * hd + i], row_w, &mut drh);
                    }
                    for i in 0..hd {
                        let (r, hp) = (tr.r[o + i], tr.h_prev[o + i]);
                        row[hd + i] = drh[i] * hp * r * (T::one() - r);
                        dh_prev[i] += drh[i] * r;
                    }
                    for i in 0..2 * hd {
                        axpy(row[i], &wh[i * hd..(i + 1) * hd], &mut dh_prev);
                    }
                    std::mem::swap(&mut carry, &mut dh_prev);
                }
                let xb = &x[b * f * steps..(b + 1) * f * steps];
                gemm(g3, steps, f, MatRef::transposed(&da, g3), MatRef::transposed(xb, steps), &mut dwx, true);
                if need_x {
                    let dxb = &mut dx[b * f * steps..(b + 1) * f * steps];
                    gemm(f, g3, steps, MatRef::transposed(wx, f), MatRef::transposed(&da, g3), dxb, true);
                }
                gemm(2 * hd, steps, hd, MatRef::strided(&da, 1, g3), MatRef::plain(&tr.h_prev, hd), &mut dwh[..2 * hd * hd], true);
                gemm(hd, steps, hd, MatRef::strided(&da[2 * hd..], 1, g3), MatRef::plain(&tr.rh, hd), &mut dwh[2 * hd * hd..], true);
                for row in da.chunks(g3) {
                    for (acc, &v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
            }
            sink.accumulate(dir.w_input, &dwx);
            sink.accumulate(dir.w_hidden, &dwh);
            sink.accumulate(dir.bias, &db);
        }
        if need_x {
            sink.accumulate(self.x, &dx);
        }
    }
}

impl<T: Real> Tape<T> {
    /// Bidirectional GRU over `x: [B, F, T]` with zero initial states.
    /// Output `[B, 2H, T]`, forward-direction features first.
    pub fn gru_bidirectional(&mut self, x: Var, forward: GruDirection, backward: GruDirection) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[2] == 0 {
            return shape_err("gru_bidirectional", format!("need [B, F, T ≥ 1], got {xs:?}"));
        }
        let (batch, features, steps) = (xs[0], xs[1], xs[2]);
        let hidden = self.shape(forward.bias)[0] / 3;
        for dir in [&forward, &backward] {
            let ok = self.shape(dir.w_input) == [3 * hidden, features]
                && self.shape(dir.w_hidden) == [3 * hidden, hidden]
                && self.shape(dir.bias) == [3 * hidden];
            if !ok || hidden == 0 {
                return shape_err("gru_bidirectional", "direction parameter shapes are inconsistent");
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); batch * 2 * hidden * steps];
        let mut traces = Vec::with_capacity(batch * 2);
        for b in 0..batch {
            let xb = &xv[b * features * steps..(b + 1) * features * steps];
            for (d, dir) in [&forward, &backward].into_iter().enumerate() {
                let (states, trace) = run_direction(
                    xb,
                    features,
                    steps,
                    hidden,
                    self.value(dir.w_input).data(),
                    self.value(dir.w_hidden).data(),
                    self.value(dir.bias).data(),
                    d == 1,
                );
                let dst = &mut out[(b * 2 * hidden + d * hidden) * steps..(b * 2 * hidden + (d + 1) * hidden) * steps];
                for t in 0..steps {
                    for i in 0..hidden {
                        dst[i * steps + t] = states[t * hidden + i];
                    }
                }
                traces.push(trace);
            }
        }
        let out = Tensor::new(vec![batch, 2 * hidden, steps], out)?;
        let mut inputs = vec![x];
        inputs.extend(forward.vars());
        inputs.extend(backward.vars());
        Ok(self.push(out, &inputs, || GruBackward {
            x,
            dirs: [forward, backward],
            traces,
            batch,
            features,
            steps,
            hidden,
        }))
    }
}
