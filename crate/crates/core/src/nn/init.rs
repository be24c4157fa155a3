use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `(fan_in, fan_out)`: `[out, in]` for matrices, `[out, in, k…]` for
/// convolution kernels where the receptive field multiplies both fans.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    let (fan_in, fan_out) = match shape {
        [] => (0, 0),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let field: usize = rest.iter().product();
            (inp * field, out * field)
        }
    };
    if fan_in == 0 || fan_out == 0 {
        return Err(Error::InvalidArgument(format!("shape {shape:?} has a zero fan")));
    }
    Ok((fan_in, fan_out))
}

pub fn glorot_bound(shape: &[usize]) -> Result<f64> {
    let (fi, fo) = fans(shape)?;
    Ok((6.0 / (fi + fo) as f64).sqrt())
}

/// I.i.d. uniform on `[−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))]`.
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Tensor<T>> {
    let bound = glorot_bound(shape)?;
    Ok(Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-bound..=bound))))
}
