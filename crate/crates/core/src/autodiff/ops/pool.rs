use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Max pooling with window 2 and stride 2 along the last axis. An odd
/// trailing element is pooled against −∞, i.e. passed through.
struct MaxPoolBackward {
    x: Var,
    /// Flat input index of the winner for each output element.
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPoolBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        if let Some(dx) = sink.slot(self.x) {
            for (&src, &g) in self.argmax.iter().zip(grad_out) {
                dx[src] += g;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Halve the last (temporal) axis with a `(1, 2)` max-pool; ties go to
    /// the first index.
    pub fn max_pool_time(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let Some(&width) = v.shape().last() else {
            return shape_err("max_pool_time", "scalar input");
        };
        if width == 0 {
            return shape_err("max_pool_time", "empty temporal axis");
        }
        let out_w = width.div_ceil(2);
        let rows = v.numel() / width;
        let mut out = Vec::with_capacity(rows * out_w);
        let mut argmax = Vec::with_capacity(rows * out_w);
        for (r, row) in v.data().chunks(width).enumerate() {
            for j in 0..out_w {
                let i0 = 2 * j;
                let pick = if i0 + 1 < width && row[i0 + 1] > row[i0] { i0 + 1 } else { i0 };
                out.push(row[pick]);
                argmax.push(r * width + pick);
            }
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = out_w;
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, &[x], || MaxPoolBackward { x, argmax }))
    }
}
