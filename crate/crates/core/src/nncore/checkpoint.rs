//! Parameter checkpoints.
//!
//! Byte layout:
//!
//! ```text
//! <JSON header, UTF-8, no embedded newlines> 0x0A
//! <count x f64, little-endian IEEE-754>
//! ```
//!
//! The header is `{"format":"minima-geom-params","version":1,"widths":[...],"count":N}`
//! where `N` equals the parameter count implied by `widths`. The payload is
//! exactly `8 * N` bytes, so a checkpoint round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nncore::network::NetworkParams;

pub const FORMAT_TAG: &str = "minima-geom-params";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    widths: Vec<usize>,
    count: usize,
}

pub fn encode(params: &NetworkParams) -> Vec<u8> {
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        widths: params.widths().to_vec(),
        count: params.len(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(8 * params.len());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<NetworkParams> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Validation("checkpoint header is not newline-terminated".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint format {} v{}",
            header.format, header.version
        )));
    }
    if header.count != NetworkParams::parameter_count(&header.widths) {
        return Err(Error::Validation(format!(
            "header count {} does not match widths {:?}",
            header.count, header.widths
        )));
    }
    let payload = &bytes[split + 1..];
    if payload.len() != 8 * header.count {
        return Err(Error::Validation(format!(
            "checkpoint payload has {} bytes, expected {}",
            payload.len(),
            8 * header.count
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    NetworkParams::from_flat(&header.widths, values)
}

/// SHA-256 of the encoded checkpoint, hex.
pub fn content_hash(params: &NetworkParams) -> String {
    hex::encode(Sha256::digest(encode(params)))
}

pub fn save(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
