//! Binary tensor fixtures.
//!
//! Layout, all little-endian: `rank: u64`, then `rank` extents as `u64`,
//! then `product(extents)` values as IEEE-754 `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

/// Upper bound on the rank accepted when reading.
const MAX_RANK: u64 = 16;

pub fn write_tensor<W: Write>(tensor: &Tensor<f32>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * (tensor.rank() + 1) + 4 * tensor.numel());
    buf.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io("tensor fixture", e))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let rank = read_u64(&mut r)?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("tensor rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let d =
            usize::try_from(read_u64(&mut r)?).map_err(|_| Error::Format("extent does not fit in memory".into()))?;
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::Format("tensor too large".into()))?;
        shape.push(d);
    }
    let mut bytes = Vec::new();
    r.by_ref()
        .take(numel as u64 * 4)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("tensor fixture", e))?;
    if bytes.len() != numel * 4 {
        return Err(Error::Format(format!(
            "expected {} value bytes, found {}",
            numel * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor_file(tensor: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_tensor(tensor, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let t = read_tensor(&mut r)?;
    let mut rest = [0u8; 1];
    match r.read(&mut rest) {
        Ok(0) => Ok(t),
        Ok(_) => Err(Error::Format(format!("trailing bytes in {}", path.display()))),
        Err(e) => Err(Error::io(path, e)),
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}
