//! Named-tensor container:
//!
//! ```text
//! u64 LE header length | UTF-8 JSON header | packed little-endian f32 data
//! ```
//!
//! The header is `{"tensors": {name: {dtype, shape, byte_offset, byte_len}},
//! "meta": <caller JSON>}`; offsets are relative to the start of the data
//! region and tensors are packed in name order.

use crate::error::{Result, TensorError};
use crate::params::Params;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: u64,
    pub byte_len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    tensors: BTreeMap<String, TensorEntry>,
    meta: serde_json::Value,
}

pub fn encode(params: &Params<f32>, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = BTreeMap::new();
    let mut data = Vec::with_capacity(params.num_scalars() * 4);
    for (name, t) in params.iter() {
        let offset = data.len() as u64;
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        tensors.insert(
            name.clone(),
            TensorEntry {
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                byte_offset: offset,
                byte_len: data.len() as u64 - offset,
            },
        );
    }
    let header = serde_json::to_vec(&Header { tensors, meta: meta.clone() })
        .map_err(|e| TensorError::Schema(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Params<f32>, serde_json::Value)> {
    let schema = |m: &str| TensorError::Schema(m.to_string());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| schema("truncated header length"))?.try_into().expect("8 bytes");
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let hbytes = bytes.get(8..8usize.saturating_add(hlen)).ok_or_else(|| schema("truncated header"))?;
    let header: Header = serde_json::from_slice(hbytes).map_err(|e| schema(&e.to_string()))?;
    let data = &bytes[8 + hlen..];
    let mut params = Params::new();
    for (name, e) in header.tensors {
        if e.dtype != "f32" {
            return Err(schema(&format!("`{name}` has dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        if e.byte_len as usize != n * 4 {
            return Err(schema(&format!("`{name}` byte_len {} != 4 * {n}", e.byte_len)));
        }
        let start = e.byte_offset as usize;
        let raw = data
            .get(start..start + n * 4)
            .ok_or_else(|| schema(&format!("`{name}` extends past the data region")))?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        params.insert(name, Tensor::new(e.shape, values)?);
    }
    Ok((params, header.meta))
}

/// Writes through a temporary sibling and renames, so readers never observe a
/// partial file.
pub fn save(path: &Path, params: &Params<f32>, meta: &serde_json::Value) -> Result<()> {
    let bytes = encode(params, meta)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Params<f32>, serde_json::Value)> {
    decode(&fs::read(path)?)
}
