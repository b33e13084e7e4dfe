//! Self-describing binary container for parameters and training state.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, the tensor data as little-endian `f64`, then the SHA-256 of all
//! preceding bytes. Any serialisable value can be stored: numeric arrays of
//! at least [`TENSOR_MIN_LEN`] elements are lifted out of the JSON into the
//! binary section.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DYNPICK\0";
pub const FORMAT_VERSION: u32 = 1;
pub const TENSOR_MIN_LEN: usize = 16;
const TENSOR_KEY: &str = "$tensor";

fn lift(value: &mut Value, tensors: &mut Vec<Vec<f64>>) {
    match value {
        Value::Array(items) if items.len() >= TENSOR_MIN_LEN && items.iter().all(Value::is_f64) => {
            let data: Vec<f64> = items.iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect();
            *value = json!({ TENSOR_KEY: tensors.len(), "len": data.len() });
            tensors.push(data);
        }
        Value::Array(items) => items.iter_mut().for_each(|v| lift(v, tensors)),
        Value::Object(map) => map.values_mut().for_each(|v| lift(v, tensors)),
        _ => {}
    }
}

fn lower(value: &mut Value, tensors: &mut [Option<Vec<f64>>]) -> Result<()> {
    if let Value::Object(map) = value {
        if let Some(idx) = map.get(TENSOR_KEY).and_then(Value::as_u64) {
            let data = tensors
                .get_mut(idx as usize)
                .and_then(Option::take)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {idx}")))?;
            *value = Value::Array(data.into_iter().map(Value::from).collect());
            return Ok(());
        }
        for v in map.values_mut() {
            lower(v, tensors)?;
        }
    } else if let Value::Array(items) = value {
        for v in items {
            lower(v, tensors)?;
        }
    }
    Ok(())
}

/// Serialises `value` into the container format.
pub fn encode<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut header = serde_json::to_value(value)?;
    let mut tensors = Vec::new();
    lift(&mut header, &mut tensors);
    let shapes: Vec<usize> = tensors.iter().map(Vec::len).collect();
    let header_bytes = serde_json::to_vec(&json!({ "value": header, "tensors": shapes }))?;

    let mut out = Vec::with_capacity(64 + header_bytes.len() + 8 * shapes.iter().sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in &tensors {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Parses and verifies a container produced by [`encode`].
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 {
        return Err(bad("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if &body[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("hash mismatch"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize.checked_add(header_len).filter(|e| *e <= body.len()).ok_or_else(|| bad("bad header length"))?;
    let header: Value = serde_json::from_slice(&body[20..header_end])?;
    let shapes: Vec<usize> = serde_json::from_value(header.get("tensors").cloned().ok_or_else(|| bad("no tensor table"))?)?;
    let mut data = &body[header_end..];
    if data.len() != 8 * shapes.iter().sum::<usize>() {
        return Err(bad("tensor section size mismatch"));
    }
    let mut tensors = Vec::with_capacity(shapes.len());
    for n in shapes {
        let (chunk, rest) = data.split_at(8 * n);
        tensors.push(Some(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()));
        data = rest;
    }
    let mut value = header.get("value").cloned().ok_or_else(|| bad("no value"))?;
    lower(&mut value, &mut tensors)?;
    Ok(serde_json::from_value(value)?)
}

pub fn save<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = encode(value)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    decode(&std::fs::read(path)?)
}
