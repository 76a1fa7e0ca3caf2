//! `TDT1` binary tensor format.
//!
//! Layout: magic `TDT1`, u8 dtype code (0 = f64, 1 = f32), u8 ndim,
//! `ndim` little-endian u64 dimensions, then the row-major payload in
//! little-endian order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TDT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[dtype as u8, t.ndim() as u8])?;
    for &s in t.shape() {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let dtype = match head[0] {
        0 => DType::F64,
        1 => DType::F32,
        other => return Err(TensorError::Format(format!("unknown dtype code {other}"))),
    };
    let ndim = head[1] as usize;
    if ndim == 0 {
        return Err(TensorError::Format("ndim 0".into()));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        shape.push(u64::from_le_bytes(b) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    match dtype {
        DType::F64 => {
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf)?;
            data.extend(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        }
        DType::F32 => {
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            data.extend(buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64));
        }
    }
    Tensor::new(shape, data)
}

pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.ndim() + 8 * t.len());
    write_tensor(&mut out, t, DType::F64).expect("writing to a Vec cannot fail");
    out
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<Tensor> {
    read_tensor(&mut bytes)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, to_bytes(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}
