use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

struct ReluBackward {
    x: Var,
}

impl<T: Real> Backward<T> for ReluBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let x = ctx.value(self.x).data();
        if let Some(dx) = sink.slot(self.x) {
            for ((d, &g), &xi) in dx.iter_mut().zip(grad_out).zip(x) {
                if xi > T::zero() {
                    *d += g;
                }
            }
        }
    }
}

/// Softmax along axis 1 of a `[B, K, rest…]` tensor.
struct SoftmaxBackward {
    x: Var,
    classes: usize,
    inner: usize,
}

impl<T: Real> Backward<T> for SoftmaxBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let y = ctx.output().data();
        let (k, inner) = (self.classes, self.inner);
        let Some(dx) = sink.slot(self.x) else { return };
        for (block, (yb, gb)) in y.chunks(k * inner).zip(grad_out.chunks(k * inner)).enumerate() {
            let out = &mut dx[block * k * inner..(block + 1) * k * inner];
            for s in 0..inner {
                let mut proj = T::zero();
                for c in 0..k {
                    proj += yb[c * inner + s] * gb[c * inner + s];
                }
                for c in 0..k {
                    let i = c * inner + s;
                    out[i] += yb[i] * (gb[i] - proj);
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, &[x], || ReluBackward { x })
    }

    /// Softmax over axis 1 (the class axis of `[B, K, …]`), computed with the
    /// per-column maximum subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.ndim() < 2 {
            return shape_err("softmax", format!("need [B, K, …], got {:?}", v.shape()));
        }
        let classes = v.shape()[1];
        let inner: usize = v.shape()[2..].iter().product();
        let mut out = v.data().to_vec();
        for block in out.chunks_mut(classes * inner) {
            for s in 0..inner {
                let mut m = T::neg_infinity();
                for c in 0..classes {
                    m = m.max(block[c * inner + s]);
                }
                let mut z = T::zero();
                for c in 0..classes {
                    let e = (block[c * inner + s] - m).exp();
                    block[c * inner + s] = e;
                    z += e;
                }
                for c in 0..classes {
                    block[c * inner + s] /= z;
                }
            }
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        Ok(self.push(out, &[x], || SoftmaxBackward { x, classes, inner }))
    }
}
