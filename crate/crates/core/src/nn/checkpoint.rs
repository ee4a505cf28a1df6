//! `CGWT` weight files: magic `b"CGWT"`, `u32` version, `u32` array count,
//! then per array a `u32` element count followed by that many `f32`, all
//! little-endian, in [`Network::param_slices`] order.

use std::fs;
use std::path::Path;

use super::network::Network;
use crate::error::{Error, FormatError, Result};

pub const CGWT_MAGIC: [u8; 4] = *b"CGWT";
pub const CGWT_VERSION: u32 = 1;

pub fn encode(net: &Network<f32>) -> Vec<u8> {
    let arrays = net.param_slices();
    let mut buf = Vec::with_capacity(12 + 4 * (arrays.len() + net.param_count()));
    buf.extend_from_slice(&CGWT_MAGIC);
    buf.extend_from_slice(&CGWT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u32).to_le_bytes());
        for v in a {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn corrupt(msg: impl Into<String>) -> Error {
    FormatError::Corrupt(msg.into()).into()
}

/// Fill `template` (which fixes the architecture) with the weights in `bytes`.
pub fn decode_into(bytes: &[u8], template: &mut Network<f32>) -> Result<()> {
    let mut at = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let s = bytes
            .get(at..at + len)
            .ok_or_else(|| corrupt(format!("checkpoint truncated at byte {at}")))?;
        at += len;
        Ok(s)
    };
    let magic = take(4)?;
    if magic != CGWT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CGWT_MAGIC,
            found: magic.try_into().expect("4 bytes"),
        }
        .into());
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != CGWT_VERSION {
        return Err(FormatError::BadVersion {
            expected: CGWT_VERSION,
            found: version,
        }
        .into());
    }
    let count = u32_at(take(4)?) as usize;
    let mut slots = template.param_slices_mut();
    if count != slots.len() {
        return Err(corrupt(format!(
            "checkpoint has {count} arrays, architecture expects {}",
            slots.len()
        )));
    }
    for (idx, slot) in slots.iter_mut().enumerate() {
        let len = u32_at(take(4)?) as usize;
        if len != slot.len() {
            return Err(corrupt(format!(
                "array {idx} has {len} values, architecture expects {}",
                slot.len()
            )));
        }
        let raw = take(4 * len)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if at != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - at)));
    }
    Ok(())
}

pub fn save(path: impl AsRef<Path>, net: &Network<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn load_into(path: impl AsRef<Path>, template: &mut Network<f32>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_into(&bytes, template)
}
