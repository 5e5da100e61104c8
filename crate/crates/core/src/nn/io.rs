//! Binary model container.
//!
//! Layout: 8-byte magic `RPTNN\0v1`, little-endian `u64` header length, JSON
//! header, little-endian `u64` parameter count, then the parameters as
//! little-endian `f64`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RPTNN\0v1";

pub fn encode<H: Serialize>(header: &H, params: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(24 + json.len() + params.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn read_u64(bytes: &[u8], at: usize) -> Result<u64> {
    bytes
        .get(at..at + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
        .ok_or_else(|| Error::ModelFormat("unexpected end of file".into()))
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let hlen = read_u64(bytes, 8)? as usize;
    let hstart: usize = 16;
    let header_bytes = bytes
        .get(hstart..hstart + hlen)
        .ok_or_else(|| Error::ModelFormat("truncated header".into()))?;
    let header = serde_json::from_slice(header_bytes)?;
    let pstart = hstart + hlen;
    let count = read_u64(bytes, pstart)? as usize;
    let body = &bytes[pstart + 8..];
    if body.len() != count * 8 {
        return Err(Error::ModelFormat(format!(
            "expected {count} parameters, found {} bytes",
            body.len()
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((header, params))
}

pub fn save<H: Serialize>(path: impl AsRef<Path>, header: &H, params: &[f64]) -> Result<()> {
    std::fs::write(path, encode(header, params)?)?;
    Ok(())
}

pub fn load<H: DeserializeOwned>(path: impl AsRef<Path>) -> Result<(H, Vec<f64>)> {
    decode(&std::fs::read(path)?)
}
