//! Flat tensor files: 16-byte header (`CSTF`, `u16` rank, five `u16`
//! dims, unused dims zero) followed by little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CSTF";
pub const MAX_RANK: usize = 5;
pub const HEADER_LEN: usize = 16;

pub fn encode_tensor(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::param(
            "shape",
            format!("rank must be 1..={MAX_RANK}"),
        ));
    }
    if shape.iter().any(|&d| d > u16::MAX as usize) {
        return Err(Error::param("shape", "dimension exceeds 65535"));
    }
    let n: usize = shape.iter().product();
    if n != data.len() {
        return Err(Error::LengthMismatch {
            left: n,
            right: data.len(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u16).to_le_bytes());
    for i in 0..MAX_RANK {
        out.extend_from_slice(&(shape.get(i).copied().unwrap_or(0) as u16).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let bad = |r: &str| Error::format("tensor", r.to_string());
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("missing CSTF header"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    let rank = u16_at(4);
    if rank == 0 || rank > MAX_RANK {
        return Err(bad("bad rank"));
    }
    let shape: Vec<usize> = (0..rank).map(|i| u16_at(6 + 2 * i)).collect();
    let n: usize = shape.iter().product();
    if bytes.len() != HEADER_LEN + 4 * n {
        return Err(bad("payload length does not match shape"));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    crate::util::atomic_write(path, &encode_tensor(shape, data)?)
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_tensor(&bytes).map_err(|e| e.at(path))
}
