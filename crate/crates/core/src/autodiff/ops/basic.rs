use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

struct AddBackward {
    a: Var,
    b: Var,
}

impl<T: Real> Backward<T> for AddBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        sink.accumulate(self.a, grad_out);
        sink.accumulate(self.b, grad_out);
    }
}

struct ReshapeBackward {
    x: Var,
}

impl<T: Real> Backward<T> for ReshapeBackward {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        sink.accumulate(self.x, grad_out);
    }
}

struct WeightedSumBackward<T> {
    x: Var,
    weights: Vec<T>,
}

impl<T: Real> Backward<T> for WeightedSumBackward<T> {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(&self, _ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let g = grad_out[0];
        if let Some(dx) = sink.slot(self.x) {
            for (d, &w) in dx.iter_mut().zip(&self.weights) {
                *d += g * w;
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return shape_err("add", format!("{:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, &[a, b], || AddBackward { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(out, &[x], || ReshapeBackward { x }))
    }

    /// `Σ wᵢ·xᵢ` against a constant weight tensor; turns any output into a
    /// scalar objective for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let vx = self.value(x);
        if vx.numel() != weights.numel() {
            return shape_err("weighted_sum", format!("{} vs {}", vx.numel(), weights.numel()));
        }
        let s = vx.data().iter().zip(weights.data()).fold(T::zero(), |s, (&a, &b)| s + a * b);
        let w = weights.data().to_vec();
        Ok(self.push(Tensor::scalar(s), &[x], || WeightedSumBackward { x, weights: w }))
    }
}
