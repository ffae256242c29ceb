//! Binary tensor container.
//!
//! Layout: `b"ARLC"`, `u32` version, `u64` header length, UTF-8 JSON header,
//! then little-endian `f32` blobs. Header offsets are relative to the first
//! byte after the header.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ARLC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model_kind: String,
    meta: serde_json::Value,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model_kind: String,
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(model_kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Self {
            model_kind: model_kind.into(),
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor<f32>> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = BTreeMap::new();
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: "f32".into(),
                    shape: t.shape().to_vec(),
                    offset,
                },
            );
            offset += 4 * t.numel() as u64;
        }
        let header = serde_json::to_vec(&Header {
            model_kind: self.model_kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 {
            return Err(bad(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}, expected {VERSION}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let body_start = 16u64
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| bad(format!("header length {hlen} exceeds file")))? as usize;
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| bad(format!("unreadable header: {e}")))?;
        let body = &bytes[body_start..];
        let mut tensors = BTreeMap::new();
        let mut spans: Vec<(u64, u64, &str)> = Vec::new();
        for (name, e) in &header.tensors {
            if e.dtype != "f32" {
                return Err(bad(format!("tensor {name} has unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(4 * n as u64).filter(|&end| end <= body.len() as u64);
            let Some(end) = end else {
                return Err(bad(format!("tensor {name} runs past end of file (truncated?)")));
            };
            spans.push((e.offset, end, name));
            let data = body[e.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name.clone(), Tensor::new(e.shape.clone(), data)?);
        }
        spans.sort();
        let mut cursor = 0;
        for (start, end, name) in &spans {
            if *start != cursor {
                return Err(bad(format!("shape table inconsistent at tensor {name}")));
            }
            cursor = *end;
        }
        if cursor != body.len() as u64 {
            return Err(bad(format!(
                "shape table covers {cursor} bytes but {} follow the header",
                body.len()
            )));
        }
        Ok(Self {
            model_kind: header.model_kind,
            meta: header.meta,
            tensors,
        })
    }

    /// Atomic write through a temporary sibling file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
