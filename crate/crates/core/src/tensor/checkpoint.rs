//! Parameter checkpoints: `TXSG`, u16 version 3, u32 tensor count, then per
//! tensor a u16-length UTF-8 name, u16 rank and u32 dims, followed by every
//! tensor's f32 payload in table order.

use std::path::Path;

use super::{Init, ParamSet, Result, Scalar, Tensor, TensorError};
use crate::binfmt::{BinError, Reader, Writer};

pub const CHECKPOINT_VERSION: u16 = 3;

pub fn encode_checkpoint<T: Scalar>(params: &ParamSet<T>) -> Vec<u8> {
    let mut w = Writer::with_header(CHECKPOINT_VERSION);
    w.u32(params.len() as u32);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.u16(name.len() as u16);
        w.bytes(name.as_bytes());
        w.u16(t.shape().len() as u16);
        for &d in t.shape() {
            w.u32(d as u32);
        }
    }
    for t in params.tensors() {
        for v in t.data() {
            w.f32(v.as_f64() as f32);
        }
    }
    w.buf
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ParamSet<T>> {
    let mut r = Reader::open(bytes, CHECKPOINT_VERSION)?;
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| BinError::Malformed("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u16()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        table.push((name, shape));
    }
    let mut params = ParamSet::new();
    for (name, shape) in table {
        let n = shape.iter().product();
        let data = r.f32s(n)?.into_iter().map(|v| T::of(v as f64)).collect();
        params.add(name, Tensor::new(shape, data)?, Init::Fixed)?;
    }
    if !r.is_at_end() {
        return Err(BinError::Malformed("trailing bytes after checkpoint payload".into()).into());
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamSet<T>> {
    decode_checkpoint(&std::fs::read(path)?)
}

/// Copies checkpoint values into `target`, which must have the same names
/// and shapes.
pub fn restore_into<T: Scalar>(target: &mut ParamSet<T>, saved: &ParamSet<T>) -> Result<()> {
    if target.names() != saved.names() {
        return Err(TensorError::UnknownParam(format!(
            "checkpoint holds {} tensors that do not match the model layout",
            saved.len()
        )));
    }
    for slot in 0..target.len() {
        let src = saved.get(slot);
        if src.shape() != target.get(slot).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "restore_into",
                expected: target.get(slot).shape().to_vec(),
                found: src.shape().to_vec(),
            });
        }
        target.get_mut(slot).data_mut().copy_from_slice(src.data());
    }
    Ok(())
}
