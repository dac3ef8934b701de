//! Binary MFCC cache: `ATSV` magic, then u32 version, frames and n_coeffs
//! (all little-endian), followed by row-major f32 coefficients.

use std::io::Write;
use std::path::Path;

use super::mfcc::{MfccConfig, MfccMatrix};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"ATSV";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn write_feature_cache(path: impl AsRef<Path>, m: &MfccMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * m.values.len());
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(m.frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.n_coeffs as u32).to_le_bytes());
    for &v in &m.values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Frame timing is not stored in the cache; it is taken from `config`.
pub fn read_feature_cache(path: impl AsRef<Path>, config: &MfccConfig) -> Result<MfccMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::format(format!("feature cache {}", path.display()), reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let frames = word(8) as usize;
    let n_coeffs = word(12) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != frames * n_coeffs * 4 {
        return Err(bad("payload length does not match header"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    MfccMatrix::new(
        frames,
        n_coeffs,
        values,
        config.frame_length_ms,
        config.frame_hop_ms,
    )
}
