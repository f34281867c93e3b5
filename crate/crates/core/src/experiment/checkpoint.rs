//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `FEADCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the header as JSON, then every tensor
//! as consecutive little-endian `f32` values. The header echoes the
//! configuration text and lists each tensor's name, shape, trainable flag
//! and byte range within the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};
use crate::vit::VideoModel;

pub const MAGIC: &[u8; 8] = b"FEADCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Byte offset within the payload.
    pub offset: u64,
    /// Byte length within the payload.
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    /// Values in directory order.
    pub tensors: Vec<Vec<f32>>,
}

/// Which tensors a load should take from the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadScope {
    All,
    /// Backbone tensors only; adapters and classifier keep their values.
    Backbone,
}

pub fn encode<T: Scalar>(params: &ParamStore<T>, config_echo: &str) -> Vec<u8> {
    let mut offset = 0u64;
    let tensors: Vec<TensorEntry> = params
        .iter()
        .map(|p| {
            let len = 4 * p.value.len() as u64;
            let e = TensorEntry {
                name: p.spec.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                offset,
                len,
            };
            offset += len;
            e
        })
        .collect();
    let header = Header {
        version: VERSION,
        config: config_echo.to_string(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params.iter() {
        for &v in p.value.data() {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let payload_start = 20u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| bad(format!("truncated header: {header_len} bytes announced")))?
        as usize;
    let header: Header = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.version != version {
        return Err(bad(format!(
            "header version {} disagrees with file version {version}",
            header.version
        )));
    }
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let numel: usize = e.shape.iter().product();
        if e.len != 4 * numel as u64 {
            return Err(bad(format!(
                "tensor {}: {} bytes recorded for shape {:?}",
                e.name, e.len, e.shape
            )));
        }
        let end = e.offset.checked_add(e.len).filter(|&end| end <= payload.len() as u64);
        let Some(end) = end else {
            return Err(bad(format!("truncated payload in tensor {}", e.name)));
        };
        let raw = &payload[e.offset as usize..end as usize];
        tensors.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect(),
        );
    }
    Ok(Checkpoint { header, tensors })
}

pub fn save_checkpoint<T: Scalar>(model: &VideoModel<T>, config_echo: &str, path: &Path) -> Result<()> {
    save_params(model.params(), config_echo, path)
}

pub fn save_params<T: Scalar>(params: &ParamStore<T>, config_echo: &str, path: &Path) -> Result<()> {
    std::fs::write(path, encode(params, config_echo)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

impl Checkpoint {
    pub fn entry(&self, name: &str) -> Option<(&TensorEntry, &[f32])> {
        self.header
            .tensors
            .iter()
            .position(|e| e.name == name)
            .map(|i| (&self.header.tensors[i], self.tensors[i].as_slice()))
    }

    /// Copies tensors into `model` by name. A full load also restores
    /// trainable flags and requires every model tensor to be present.
    pub fn apply<T: Scalar>(&self, model: &mut VideoModel<T>, scope: LoadScope) -> Result<()> {
        let store = model.params_mut();
        let mut updates = Vec::new();
        for (i, p) in store.iter().enumerate() {
            if scope == LoadScope::Backbone && !p.spec.group.is_backbone() {
                continue;
            }
            let (entry, values) = self
                .entry(&p.spec.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.spec.name)))?;
            if entry.shape != p.value.shape() {
                return Err(Error::Shape(format!(
                    "tensor {}: checkpoint shape {:?}, model expects {:?}",
                    p.spec.name,
                    entry.shape,
                    p.value.shape()
                )));
            }
            let data = values.iter().map(|&v| T::of(v as f64)).collect();
            updates.push((i, Tensor::new(entry.shape.clone(), data)?, entry.trainable));
        }
        for (i, value, trainable) in updates {
            let p = store.get_mut(i);
            p.value = value;
            if scope == LoadScope::All {
                p.trainable = trainable;
            }
        }
        Ok(())
    }
}
