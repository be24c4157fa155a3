use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Probability floor inside the logarithm of the cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

struct TimeAverageBackward {
    x: Var,
    window: usize,
}

impl<T: Real> Backward<T> for TimeAverageBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let w = self.window;
        let inv = T::one() / T::from_usize_lossy(w);
        if let Some(dx) = sink.slot(self.x) {
            for (chunk, &g) in dx.chunks_mut(w).zip(grad_out) {
                chunk.iter_mut().for_each(|d| *d += g * inv);
            }
        }
    }
}

struct CrossEntropyBackward {
    y: Var,
    /// Flat index into `y` of the target probability of every scored window.
    picks: Vec<usize>,
    scale: f64,
}

impl<T: Real> Backward<T> for CrossEntropyBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.y]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let y = ctx.value(self.y).data();
        let g = grad_out[0] * T::lit(self.scale);
        let floor = T::lit(LOG_FLOOR);
        if let Some(dy) = sink.slot(self.y) {
            for &i in &self.picks {
                if y[i] > floor {
                    dy[i] -= g / y[i];
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Mean over consecutive, non-overlapping windows of the last axis.
    pub fn time_average(&mut self, x: Var, window: usize) -> Result<Var> {
        let v = self.value(x);
        let Some(&width) = v.shape().last() else {
            return shape_err("time_average", "scalar input");
        };
        if window == 0 || width % window != 0 {
            return Err(Error::InvalidArgument(format!(
                "averaging window {window} does not divide {width} columns"
            )));
        }
        if window == 1 {
            let out = v.clone();
            return Ok(self.push(out, &[x], || TimeAverageBackward { x, window }));
        }
        let inv = T::one() / T::from_usize_lossy(window);
        let data: Vec<T> = v.data().chunks(window).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = width / window;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, &[x], || TimeAverageBackward { x, window }))
    }

    /// `−scale · Σ log max(y[b, target, n], floor)` over windows with a
    /// target; `targets[b * N + n]` is `None` for masked windows.
    pub fn cross_entropy(&mut self, y: Var, targets: &[Option<usize>], scale: f64) -> Result<Var> {
        let v = self.value(y);
        if v.ndim() != 3 {
            return shape_err("cross_entropy", format!("need [B, K, N], got {:?}", v.shape()));
        }
        let (b, k, n) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if targets.len() != b * n {
            return shape_err("cross_entropy", format!("{} targets for {} windows", targets.len(), b * n));
        }
        let mut picks = Vec::with_capacity(targets.len());
        for (idx, t) in targets.iter().enumerate() {
            if let Some(c) = *t {
                if c >= k {
                    return Err(Error::InvalidArgument(format!("target class {c} ≥ {k}")));
                }
                picks.push(((idx / n) * k + c) * n + idx % n);
            }
        }
        if picks.is_empty() {
            return Err(Error::InvalidArgument("every window is masked".into()));
        }
        let floor = T::lit(LOG_FLOOR);
        let data = v.data();
        let total = picks.iter().fold(T::zero(), |s, &i| s - data[i].max(floor).ln());
        let out = Tensor::scalar(total * T::lit(scale));
        Ok(self.push(out, &[y], || CrossEntropyBackward { y, picks, scale }))
    }
}
