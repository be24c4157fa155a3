use crate::autodiff::{Backward, BackwardCtx, GradSink, Tape, Var};
use crate::error::{shape_err, Result};
use crate::scalar::{gemm, MatRef, Real};
use crate::tensor::Tensor;

/// Stride and zero padding of a 2D convolution, as `(height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: (1, 1), padding: (0, 0) }
    }
}

impl Conv2dSpec {
    pub fn padded(ph: usize, pw: usize) -> Self {
        Self { stride: (1, 1), padding: (ph, pw) }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// 1×1 kernels at stride 1 without padding read the input image as-is.
    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == (1, 1)
            && self.spec.padding == (0, 0)
    }
}

fn im2col<T: Real>(g: &Geometry, img: &[T], cols: &mut [T]) {
    let (sh, sw) = g.spec.stride;
    let (ph, pw) = g.spec.padding;
    let p = g.positions();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy as usize >= g.h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &img[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix as usize >= g.w { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(g: &Geometry, cols: &[T], img: &mut [T]) {
    let (sh, sw) = g.spec.stride;
    let (ph, pw) = g.spec.padding;
    let p = g.positions();
    for ci in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let dst = &mut img[(ci * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dBackward {
    x: Var,
    w: Var,
    b: Option<Var>,
    g: Geometry,
}

impl<T: Real> Backward<T> for Conv2dBackward {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.x, self.w];
        v.extend(self.b);
        v
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T], sink: &mut GradSink<'_, T>) {
        let g = &self.g;
        let x = ctx.value(self.x).data();
        let w = ctx.value(self.w).data();
        let (kc, p) = (g.patch(), g.positions());
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * p;

        if let Some(b) = self.b {
            if let Some(db) = sink.slot(b) {
                for go in grad_out.chunks(out_len) {
                    for (c, d) in db.iter_mut().enumerate() {
                        *d += go[c * p..(c + 1) * p].iter().copied().sum::<T>();
                    }
                }
            }
        }

        let need_w = ctx.requires_grad(self.w);
        let need_x = ctx.requires_grad(self.x);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kc * p] };
        let mut dw = if need_w { vec![T::zero(); g.cout * kc] } else { Vec::new() };
        let mut dcols = if need_x { vec![T::zero(); kc * p] } else { Vec::new() };
        let mut dx_all = if need_x { vec![T::zero(); g.batch * in_len] } else { Vec::new() };

        for bi in 0..g.batch {
            let img = &x[bi * in_len..(bi + 1) * in_len];
            let go = &grad_out[bi * out_len..(bi + 1) * out_len];
            if need_w {
                let cols_ref: &[T] = if g.is_pointwise() {
                    img
                } else {
                    im2col(g, img, &mut cols);
                    &cols
                };
                // dW (cout×kc) += dY (cout×p) · colsᵀ (p×kc)
                gemm(g.cout, p, kc, MatRef::plain(go, p), MatRef::transposed(cols_ref, p), &mut dw, true);
            }
            if need_x {
                let dimg = &mut dx_all[bi * in_len..(bi + 1) * in_len];
                if g.is_pointwise() {
                    gemm(kc, g.cout, p, MatRef::transposed(w, kc), MatRef::plain(go, p), dimg, true);
                } else {
                    // dcols (kc×p) = Wᵀ (kc×cout) · dY (cout×p)
                    gemm(kc, g.cout, p, MatRef::transposed(w, kc), MatRef::plain(go, p), &mut dcols, false);
                    col2im_add(g, &dcols, dimg);
                }
            }
        }
        if need_w {
            sink.accumulate(self.w, &dw);
        }
        if need_x {
            sink.accumulate(self.x, &dx_all);
        }
    }
}

impl<T: Real> Tape<T> {
    /// Cross-correlation of `x: [B, Cin, H, W]` with `w: [Cout, Cin, kh, kw]`
    /// plus an optional per-map bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err("conv2d", format!("need 4-D input and kernel, got {xs:?} and {ws:?}"));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if kcin != cin {
            return shape_err("conv2d", format!("input has {cin} channels, kernel expects {kcin}"));
        }
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        if sh == 0 || sw == 0 {
            return shape_err("conv2d", "zero stride");
        }
        if kh > h + 2 * ph || kw > wd + 2 * pw {
            return shape_err("conv2d", format!("kernel {kh}×{kw} exceeds padded input {h}×{wd}"));
        }
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return shape_err("conv2d", format!("bias needs {cout} entries"));
            }
        }
        let g = Geometry {
            batch,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            oh: (h + 2 * ph - kh) / sh + 1,
            ow: (wd + 2 * pw - kw) / sw + 1,
            spec,
        };
        let (kc, p) = (g.patch(), g.positions());
        let in_len = cin * h * wd;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); batch * cout * p];
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kc * p] };
        for bi in 0..batch {
            let img = &xv[bi * in_len..(bi + 1) * in_len];
            let dst = &mut out[bi * cout * p..(bi + 1) * cout * p];
            let cols_ref: &[T] = if g.is_pointwise() {
                img
            } else {
                im2col(&g, img, &mut cols);
                &cols
            };
            gemm(cout, kc, p, MatRef::plain(wv, kc), MatRef::plain(cols_ref, p), dst, false);
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for block in out.chunks_mut(cout * p) {
                for (c, row) in block.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[c]);
                }
            }
        }
        let out = Tensor::new(vec![batch, cout, g.oh, g.ow], out)?;
        let inputs: Vec<Var> = [x, w].into_iter().chain(b).collect();
        Ok(self.push(out, &inputs, || Conv2dBackward { x, w, b, g }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pointwise_kernel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 1 * 5).map(|v| v as f64 - 7.0).collect();
        let x = tape.constant(Tensor::new([2, 3, 1, 5], data.clone()).unwrap());
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let w = tape.constant(Tensor::new([3, 3, 1, 1], eye).unwrap());
        let y = tape.conv2d(x, w, None, Conv2dSpec::default()).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn same_padding_keeps_width() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full([1, 2, 1, 9], 1.0));
        let w = tape.constant(Tensor::full([4, 2, 1, 3], 1.0));
        let y = tape.conv2d(x, w, None, Conv2dSpec::padded(0, 1)).unwrap();
        assert_eq!(tape.shape(y), &[1, 4, 1, 9]);
        let row = &tape.value(y).data()[..9];
        assert_eq!(row[0], 4.0);
        assert_eq!(row[4], 6.0);
        assert_eq!(row[8], 4.0);
    }

    #[test]
    fn zero_kernel_grad_is_sum_of_windows() {
        // ones upstream: dW[co, ci, 0, kj] = Σ_ox x[ci, ox + kj]
        let mut tape = Tape::<f64>::new();
        let xdata: Vec<f64> = (0..2 * 6).map(|v| (v as f64).sqrt()).collect();
        let x = tape.constant(Tensor::new([1, 2, 1, 6], xdata.clone()).unwrap());
        let w = tape.leaf(Tensor::zeros([3, 2, 1, 2]), true);
        let y = tape.conv2d(x, w, None, Conv2dSpec::default()).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        let s = tape.weighted_sum(y, &Tensor::full([15], 1.0)).unwrap();
        let g = tape.backward(s).unwrap();
        let dw = g.get(w).unwrap();
        for co in 0..3 {
            for ci in 0..2 {
                for kj in 0..2 {
                    let want: f64 = (0..5).map(|ox| xdata[ci * 6 + ox + kj]).sum();
                    assert!((dw[(co * 2 + ci) * 2 + kj] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros([1, 2, 1, 4]));
        let w = tape.constant(Tensor::zeros([1, 3, 1, 1]));
        assert!(tape.conv2d(x, w, None, Conv2dSpec::default()).is_err());
    }
}
