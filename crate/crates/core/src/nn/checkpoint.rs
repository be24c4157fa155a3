//! Binary checkpoint container.
//!
//! All integers and floats are little-endian; tensors are stored as `f32`.
//!
//! ```text
//! "SNCK"  u32 version (=1)
//! u32 n_params   { u16 name_len, name, u8 kind, u8 ndim, u32 dims[ndim], f32 values[] }
//! u32 n_buffers  { u16 name_len, name, u8 ndim, u32 dims[ndim], f32 values[] }
//! u8 has_optimizer
//!   f64 lr, beta1, beta2, eps, weight_decay; u64 step;
//!   per parameter: f32 m[numel], f32 v[numel]
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::adam::{Adam, AdamConfig};
use crate::nn::params::{ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SNCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData<T> {
    pub params: ParamStore<T>,
    /// Non-trainable state such as batch-normalization running statistics.
    pub buffers: Vec<(String, Tensor<T>)>,
    pub optimizer: Option<Adam<T>>,
}

fn put_u8(w: &mut impl Write, v: u8) -> Result<()> {
    Ok(w.write_all(&[v])?)
}

fn put_u16(w: &mut impl Write, v: u16) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f32s<T: Real>(w: &mut impl Write, vals: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    Ok(w.write_all(&buf)?)
}

fn put_name(w: &mut impl Write, name: &str) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
    put_u16(w, len)?;
    Ok(w.write_all(name.as_bytes())?)
}

fn put_shape(w: &mut impl Write, shape: &[usize]) -> Result<()> {
    put_u8(w, u8::try_from(shape.len()).map_err(|_| Error::Format("rank above 255".into()))?)?;
    for &d in shape {
        put_u32(w, u32::try_from(d).map_err(|_| Error::Format("dimension above u32".into()))?)?;
    }
    Ok(())
}

fn take<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    Ok(take::<1>(r)?[0])
}

fn get_u16(r: &mut impl Read) -> Result<u16> {
    Ok(u16::from_le_bytes(take(r)?))
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(take(r)?))
}

fn get_f32s<T: Real>(r: &mut impl Read, n: usize) -> Result<Vec<T>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated tensor data: {e}")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn get_name(r: &mut impl Read) -> Result<String> {
    let len = get_u16(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated name: {e}")))?;
    String::from_utf8(b).map_err(|_| Error::Format("name is not UTF-8".into()))
}

fn get_shape(r: &mut impl Read) -> Result<Vec<usize>> {
    let nd = get_u8(r)? as usize;
    (0..nd).map(|_| get_u32(r).map(|d| d as usize)).collect()
}

impl<T: Real> CheckpointData<T> {
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_u32(w, self.params.len() as u32)?;
        for p in self.params.iter() {
            put_name(w, &p.name)?;
            put_u8(w, p.kind.code())?;
            put_shape(w, p.value.shape())?;
            put_f32s(w, p.value.data())?;
        }
        put_u32(w, self.buffers.len() as u32)?;
        for (name, t) in &self.buffers {
            put_name(w, name)?;
            put_shape(w, t.shape())?;
            put_f32s(w, t.data())?;
        }
        match &self.optimizer {
            None => put_u8(w, 0)?,
            Some(adam) => {
                put_u8(w, 1)?;
                let c = adam.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps, c.weight_decay] {
                    put_f64(w, v)?;
                }
                put_u64(w, adam.step_count())?;
                let (m, v) = adam.moments();
                for (mi, vi) in m.iter().zip(v) {
                    put_f32s(w, mi)?;
                    put_f32s(w, vi)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        if &take::<4>(r)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mut params = ParamStore::new();
        for _ in 0..get_u32(r)? {
            let name = get_name(r)?;
            let kind = ParamKind::from_code(get_u8(r)?)
                .ok_or_else(|| Error::Format(format!("bad kind for {name}")))?;
            let shape = get_shape(r)?;
            let n = shape.iter().product();
            params.add(name, kind, Tensor::new(shape, get_f32s(r, n)?)?);
        }
        let mut buffers = Vec::new();
        for _ in 0..get_u32(r)? {
            let name = get_name(r)?;
            let shape = get_shape(r)?;
            let n = shape.iter().product();
            buffers.push((name, Tensor::new(shape, get_f32s(r, n)?)?));
        }
        let optimizer = match get_u8(r)? {
            0 => None,
            1 => {
                let config = AdamConfig {
                    lr: get_f64(r)?,
                    beta1: get_f64(r)?,
                    beta2: get_f64(r)?,
                    eps: get_f64(r)?,
                    weight_decay: get_f64(r)?,
                };
                let step = get_u64(r)?;
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                for p in params.iter() {
                    m.push(get_f32s(r, p.value.numel())?);
                    v.push(get_f32s(r, p.value.numel())?);
                }
                Some(Adam::from_parts(config, step, m, v))
            }
            other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
        };
        Ok(Self { params, buffers, optimizer })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_f32_state() {
        let mut params = ParamStore::<f32>::new();
        params.add("conv.w", ParamKind::Weight, Tensor::from_fn([2, 1, 1, 3], |i| i as f32 * 0.25 - 1.0));
        params.add("bn.gamma", ParamKind::Affine, Tensor::full([2], 1.5));
        let mut adam = Adam::new(AdamConfig::default(), &params);
        let grads: Vec<Vec<f32>> = params.iter().map(|p| vec![0.5; p.value.numel()]).collect();
        adam.step(&mut params, &grads).unwrap();
        let ck = CheckpointData {
            params,
            buffers: vec![("bn.running_mean".into(), Tensor::full([2], 0.1))],
            optimizer: Some(adam),
        };
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = CheckpointData::<f32>::read(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let ck = CheckpointData::<f32> { params: ParamStore::new(), buffers: vec![], optimizer: None };
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        assert!(CheckpointData::<f32>::read(&mut &bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(CheckpointData::<f32>::read(&mut bytes.as_slice()).is_err());
    }
}
