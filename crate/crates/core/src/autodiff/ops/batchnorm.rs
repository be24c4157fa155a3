use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::{centered_sq_sum, lane_sum, Real};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of one batch-normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(features: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); features],
            running_var: vec![T::one(); features],
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }
}

struct BatchNormBackward<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
    features: usize,
    inner: usize,
}

impl<T: Real> Backward<T> for BatchNormBackward<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.gamma, self.beta]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let (c, inner) = (self.features, self.inner);
        let gamma = ctx.value(self.gamma).data();
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for (blk_g, blk_x) in grad_out.chunks(c * inner).zip(self.xhat.chunks(c * inner)) {
            for f in 0..c {
                let g = &blk_g[f * inner..(f + 1) * inner];
                let xh = &blk_x[f * inner..(f + 1) * inner];
                sum_dy[f] += g.iter().copied().sum::<T>();
                sum_dy_xhat[f] += g.iter().zip(xh).fold(T::zero(), |s, (&a, &b)| s + a * b);
            }
        }
        sink.accumulate(self.gamma, &sum_dy_xhat);
        sink.accumulate(self.beta, &sum_dy);

        let Some(dx) = sink.slot(self.x) else { return };
        let n = T::from_usize_lossy(grad_out.len() / c);
        for (bi, (blk_g, blk_x)) in grad_out.chunks(c * inner).zip(self.xhat.chunks(c * inner)).enumerate() {
            let base = bi * c * inner;
            for f in 0..c {
                let scale = gamma[f] * self.inv_std[f];
                let g = &blk_g[f * inner..(f + 1) * inner];
                let xh = &blk_x[f * inner..(f + 1) * inner];
                let out = &mut dx[base + f * inner..base + (f + 1) * inner];
                match self.mode {
                    Mode::Eval => {
                        for (d, &gi) in out.iter_mut().zip(g) {
                            *d += scale * gi;
                        }
                    }
                    Mode::Train => {
                        let (mdy, mdyx) = (sum_dy[f] / n, sum_dy_xhat[f] / n);
                        for ((d, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
                            *d += scale * (gi - mdy - xi * mdyx);
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Per-feature normalization of `x: [B, C, …]` over batch and trailing
    /// axes. Train mode uses batch statistics and updates `state`; eval mode
    /// uses the running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        mode: Mode,
    ) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() < 2 {
            return shape_err("batch_norm", format!("need [B, C, …], got {:?}", v.shape()));
        }
        let c = v.shape()[1];
        let inner: usize = v.shape()[2..].iter().product();
        let count = v.numel() / c.max(1);
        if c != state.features() || self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return shape_err("batch_norm", format!("feature count {c} disagrees with parameters"));
        }
        if mode == Mode::Train && count < 2 {
            return shape_err("batch_norm", "train mode needs at least 2 values per feature");
        }

        let data = v.data();
        let (mean, var) = match mode {
            Mode::Train => {
                let n = T::from_usize_lossy(count);
                let mut mean = vec![T::zero(); c];
                for blk in data.chunks(c * inner) {
                    for f in 0..c {
                        mean[f] += lane_sum(&blk[f * inner..(f + 1) * inner]);
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![T::zero(); c];
                for blk in data.chunks(c * inner) {
                    for f in 0..c {
                        let m = mean[f];
                        var[f] += centered_sq_sum(&blk[f * inner..(f + 1) * inner], m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n);
                let bessel = n / (n - T::one());
                for f in 0..c {
                    let mo = state.momentum;
                    state.running_mean[f] = (T::one() - mo) * state.running_mean[f] + mo * mean[f];
                    state.running_var[f] = (T::one() - mo) * state.running_var[f] + mo * var[f] * bessel;
                }
                (mean, var)
            }
            Mode::Eval => (state.running_mean.clone(), state.running_var.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + state.eps).sqrt()).collect();
        let gamma_v = self.value(gamma).data();
        let beta_v = self.value(beta).data();
        let keep_xhat = [x, gamma, beta].iter().any(|v| self.requires_grad(*v));
        let mut xhat = if keep_xhat { vec![T::zero(); data.len()] } else { Vec::new() };
        let mut out = vec![T::zero(); data.len()];
        for (b, blk) in data.chunks(c * inner).enumerate() {
            for f in 0..c {
                let range = b * c * inner + f * inner..b * c * inner + (f + 1) * inner;
                let src = &blk[f * inner..(f + 1) * inner];
                let (m, s, g, be) = (mean[f], inv_std[f], gamma_v[f], beta_v[f]);
                if keep_xhat {
                    for ((h, o), &xi) in xhat[range.clone()].iter_mut().zip(&mut out[range]).zip(src) {
                        *h = (xi - m) * s;
                        *o = g * *h + be;
                    }
                } else {
                    // fold the normalization into one affine map
                    let (scale, shift) = (g * s, be - g * s * m);
                    for (o, &xi) in out[range].iter_mut().zip(src) {
                        *o = scale * xi + shift;
                    }
                }
            }
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(out, &[x, gamma, beta], || BatchNormBackward {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            mode,
            features: c,
            inner,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_feature_mean(t: &Tensor<f64>, f: usize) -> f64 {
        let (c, inner) = (t.shape()[1], t.shape()[2..].iter().product::<usize>());
        let vals: Vec<f64> = t
            .data()
            .chunks(c * inner)
            .flat_map(|b| b[f * inner..(f + 1) * inner].to_vec())
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn beta_sets_train_mean() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn([3, 2, 1, 4], |i| (i as f64 * 1.3).sin() * 4.0 + 2.0));
        let g = tape.constant(Tensor::full([2], 1.0));
        let b = tape.constant(Tensor::full([2], 5.0));
        let mut st = BatchNormState::new(2);
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Train).unwrap();
        for f in 0..2 {
            assert!((per_feature_mean(tape.value(y), f) - 5.0).abs() < 1e-12);
        }
        assert!(st.running_mean.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn normalized_batch_is_fixed_point() {
        // values ±1 per feature: mean 0, biased variance 1; eps = 1e-5 bounds
        // the residual at 1 − 1/√(1 + eps) ≈ 5e-6
        let data = vec![1.0, -1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0];
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new([2, 2, 1, 2], data.clone()).unwrap());
        let g = tape.constant(Tensor::full([2], 1.0));
        let b = tape.constant(Tensor::zeros([2]));
        let mut st = BatchNormState::new(2);
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Train).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(&data) {
            assert!((o - i).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut st = BatchNormState::<f64>::new(1);
        st.running_mean = vec![2.0];
        st.running_var = vec![4.0 - st.eps];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new([1, 1, 2], vec![2.0, 6.0]).unwrap());
        let g = tape.constant(Tensor::full([1], 1.0));
        let b = tape.constant(Tensor::zeros([1]));
        let y = tape.batch_norm(x, g, b, &mut st, Mode::Eval).unwrap();
        let out = tape.value(y).data();
        assert!((out[0] - 0.0).abs() < 1e-12 && (out[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn train_mode_rejects_single_value() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 3]));
        let g = tape.constant(Tensor::full([3], 1.0));
        let b = tape.constant(Tensor::zeros([3]));
        let mut st = BatchNormState::new(3);
        assert!(tape.batch_norm(x, g, b, &mut st, Mode::Train).is_err());
    }
}
