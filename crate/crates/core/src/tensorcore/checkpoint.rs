//! Flat binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//! `b"ELDNCKPT"`, `u32` version, `u64` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u64` dims, `f64` values.

use super::params::ParamStore;
use super::tensor::Tensor;
use super::TensorError;
use crate::scalar::Scalar;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 8] = b"ELDNCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(mut w: impl Write, params: &ParamStore<T>) -> Result<(), TensorError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Scalar>(mut r: impl Read) -> Result<Vec<(String, Tensor<T>)>, TensorError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| TensorError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(T::of(f64::from_bits(read_u64(&mut r)?)));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Overwrites `params` with checkpointed tensors, matching by name and shape.
pub fn load_into<T: Scalar>(params: &mut ParamStore<T>, entries: Vec<(String, Tensor<T>)>) -> Result<(), TensorError> {
    if entries.len() != params.len() {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            params.len()
        )));
    }
    for (name, t) in entries {
        let id = params
            .find(&name)
            .ok_or_else(|| TensorError::Checkpoint(format!("unknown tensor {name}")))?;
        if params.get(id).shape() != t.shape() {
            return Err(TensorError::Checkpoint(format!(
                "tensor {name}: shape {:?} vs model {:?}",
                t.shape(),
                params.get(id).shape()
            )));
        }
        *params.get_mut(id) = t;
    }
    Ok(())
}
