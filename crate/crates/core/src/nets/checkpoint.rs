//! Binary checkpoint container.
//!
//! ```text
//! "LCC1" | header length (u32 LE) | JSON header | f32 LE payload
//! ```
//!
//! The header records the format version, free-form metadata (the scheme
//! configuration), the architecture of every network and a tensor directory
//! of `(name, shape, byte offset into the payload)`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchSpec, Network};
use crate::autodiff::ParamStore;
use crate::error::{CheckpointError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LCC1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub spec: ArchSpec,
    pub span: [usize; 2],
}

impl NetworkEntry {
    pub fn of(net: &Network) -> Self {
        let span = net.span();
        Self { name: net.name().to_string(), spec: net.spec().clone(), span: [span.start, span.end] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub metadata: serde_json::Value,
    pub networks: Vec<NetworkEntry>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    /// Re-bind the network described by `entry` to the loaded parameters.
    pub fn network(&self, entry: &NetworkEntry) -> Result<Network> {
        Network::attach(&entry.spec, &entry.name, entry.span[0]..entry.span[1], &self.store)
    }

    /// Fail with [`CheckpointError::ShapeMismatch`] unless the stored
    /// networks are exactly `expected`.
    pub fn expect_networks(&self, expected: &[NetworkEntry]) -> Result<()> {
        if self.header.networks.len() != expected.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "checkpoint holds {} networks, configuration needs {}",
                self.header.networks.len(),
                expected.len()
            ))
            .into());
        }
        for (have, want) in self.header.networks.iter().zip(expected) {
            if have != want {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "network {:?} is {:?}, configuration needs {:?} as {:?}",
                    have.name, have.spec, want.name, want.spec
                ))
                .into());
            }
        }
        Ok(())
    }
}

/// Serialize every parameter of `store` plus the architecture of `networks`.
pub fn to_bytes(metadata: serde_json::Value, networks: &[&Network], store: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut offset = 0;
    for (_, p) in store.iter() {
        tensors.push(TensorEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset });
        offset += p.value.len() * 4;
    }
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        metadata,
        networks: networks.iter().map(|n| NetworkEntry::of(n)).collect(),
        tensors,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated(format!("{} bytes, magic needs 4", bytes.len())).into());
    }
    if &bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(&bytes[..4]);
        return Err(CheckpointError::BadMagic { found }.into());
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated("header length field incomplete".into()).into());
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| CheckpointError::Truncated(format!("header claims {header_len} bytes, file has {}", bytes.len() - 8)))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| CheckpointError::Header(e.to_string()))?;
    // Check the version before the rest of the schema, so a future layout is
    // reported as a version problem rather than a parse failure.
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CheckpointError::Header("missing format_version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(CheckpointError::Version { found: version as u32, supported: FORMAT_VERSION }.into());
    }
    let header: CheckpointHeader = serde_json::from_value(raw).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let payload = &bytes[payload_start..];
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let count: usize = t.shape.iter().product();
        let end = t.offset + count * 4;
        if end > payload.len() {
            return Err(CheckpointError::Truncated(format!(
                "tensor {:?} spans payload bytes {}..{end}, payload has {}",
                t.name,
                t.offset,
                payload.len()
            ))
            .into());
        }
        let data = payload[t.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let value = Tensor::new(t.shape.clone(), data).map_err(|e| CheckpointError::Header(e.to_string()))?;
        store.add(t.name.clone(), value).map_err(|e| CheckpointError::Header(e.to_string()))?;
    }
    let ckpt = Checkpoint { header, store };
    for entry in &ckpt.header.networks {
        ckpt.network(entry)?;
    }
    Ok(ckpt)
}

pub fn save(path: &Path, metadata: serde_json::Value, networks: &[&Network], store: &ParamStore<f32>) -> Result<()> {
    fs::write(path, to_bytes(metadata, networks, store)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}
