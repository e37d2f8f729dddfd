//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic `PUGANCKP`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f32`
//! values. Manifest offsets count `f32` elements from the start of the
//! buffer section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Stage, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::ParameterStore;

pub const MAGIC: &[u8; 8] = b"PUGANCKP";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Named `f32` buffers plus the manifest describing them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub config: TrainConfig,
    tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    /// The data and output directories are dropped from the stored config so
    /// that identical runs written to different places give identical bytes.
    pub fn new(stage: Stage, epoch: usize, step: usize, config: TrainConfig) -> Self {
        let config = TrainConfig { data_dir: None, out_dir: None, ..config };
        Self { stage, epoch, step, config, tensors: BTreeMap::new() }
    }

    /// Adds every entry of `store` under `prefix` (e.g. `"generator/"`).
    pub fn add_store(&mut self, prefix: &str, store: &ParameterStore) -> Result<()> {
        for (name, value) in store.snapshot()? {
            self.tensors.insert(format!("{prefix}{name}"), value);
        }
        Ok(())
    }

    /// Overwrites every entry of `store` from the tensors under `prefix`.
    /// Every store entry must be present with a matching shape.
    pub fn restore_store(&self, prefix: &str, store: &ParameterStore) -> Result<()> {
        for (name, _, _) in store.entries() {
            let key = format!("{prefix}{name}");
            let (shape, data) = self
                .tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no parameter `{key}`")))?;
            store.assign(name, shape, data).map_err(|e| match e {
                Error::ShapeMismatch { detail, .. } => Error::ShapeMismatch { name: key.clone(), detail },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn has_group(&self, prefix: &str) -> bool {
        self.tensors.keys().any(|k| k.starts_with(prefix))
    }

    pub fn tensors(&self) -> &BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        &self.tensors
    }

    pub fn require_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Stage { found: self.stage.to_string(), expected: expected.to_string() });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, (shape, data)) in &self.tensors {
            entries.push(TensorEntry { name: name.clone(), shape: shape.clone(), offset, numel: data.len() });
            offset += data.len();
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            stage: self.stage,
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in self.tensors.values() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Truncated(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Truncated(format!("manifest needs {len} bytes, {} available", body.len())));
        }
        let (json, buffers) = body.split_at(len);
        let raw: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::VersionMismatch {
                found: version.map_or(0, |v| v.min(u32::MAX as u64) as u32),
                expected: SCHEMA_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
        let available = buffers.len() / 4;
        let mut tensors = BTreeMap::new();
        for entry in &manifest.tensors {
            let expected: usize = entry.shape.iter().product();
            if entry.numel != expected {
                return Err(Error::ShapeMismatch {
                    name: entry.name.clone(),
                    detail: format!("shape {:?} holds {expected} values but the buffer has {}", entry.shape, entry.numel),
                });
            }
            let end = entry.offset.checked_add(entry.numel).filter(|&e| e <= available).ok_or_else(|| {
                Error::Truncated(format!("buffer of `{}` runs past the end of the file", entry.name))
            })?;
            let data: Vec<f32> = buffers[4 * entry.offset..4 * end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(entry.name.clone(), (entry.shape.clone(), data)).is_some() {
                return Err(Error::Checkpoint(format!("parameter `{}` listed twice", entry.name)));
            }
        }
        Ok(Self {
            stage: manifest.stage,
            epoch: manifest.epoch,
            step: manifest.step,
            config: manifest.config,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads only the manifest of a serialized checkpoint.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + len).ok_or_else(|| Error::Truncated("manifest".into()))?;
    serde_json::from_slice(json).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Serializes `manifest` into the header of `bytes`, keeping the buffers.
/// Used to build deliberately inconsistent files in tests.
pub fn replace_manifest(bytes: &[u8], manifest: &Manifest) -> Result<Vec<u8>> {
    read_manifest(bytes)?;
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = serde_json::to_vec(manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[16 + header_len..]);
    Ok(out)
}
