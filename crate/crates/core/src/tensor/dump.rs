//! Raw tensor dump: rank and extents as little-endian `u64`, then the values
//! as little-endian `f32` in row-major order.

use std::io::{Read, Write};

use super::{numel, Element, Tensor};
use crate::error::{Error, Result};

/// Upper bound on a dumped tensor's rank; anything larger is corrupt input.
const MAX_RANK: u64 = 16;

pub fn write_raw<F: Element, W: Write>(tensor: &Tensor<F>, mut w: W) -> Result<()> {
    w.write_all(&(tensor.rank() as u64).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let data = tensor.data();
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data.iter() {
        buf.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_raw<R: Read>(mut r: R) -> Result<Tensor<f32>> {
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rank = u64::from_le_bytes(word);
    if rank > MAX_RANK {
        return Err(Error::Format {
            what: "tensor dump",
            reason: format!("rank {rank} exceeds {MAX_RANK}"),
        });
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        r.read_exact(&mut word)?;
        shape.push(u64::from_le_bytes(word) as usize);
    }
    let n = numel(&shape);
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(&shape, data)
}
