//! Parameter checkpoints.
//!
//! ```text
//! "TFCP" | version u16 = 1 | tensor_count u32
//! per tensor: name_len u16 | name utf-8 | ndim u8 | dims u32 x ndim
//! then every tensor's values as little-endian f32, in declaration order
//! ```
//!
//! A `<stem>.meta.json` sidecar records the model kind, config, config hash
//! and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ClassifierHead, FusionParams, ParamSet, Pooling};
use crate::io::{read_json, sha256_hex, write_atomic, write_json};

pub const MAGIC: &[u8; 4] = b"TFCP";
pub const VERSION: u16 = 1;

pub type NamedTensor = (String, Vec<usize>, Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Fusion,
    Classifier { pooling: Pooling },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelKind,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn new(model: ModelKind, config: serde_json::Value, seed: u64) -> Self {
        let config_hash = config_hash(&config);
        CheckpointMeta {
            model,
            config,
            config_hash,
            seed,
        }
    }
}

/// SHA-256 over the compact JSON rendering.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(config.to_string().as_bytes())
}

pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn encode<P: ParamSet>(params: &P) -> Result<Vec<u8>> {
    let shapes = params.shapes();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (name, dims) in &shapes {
        let len = u16::try_from(name.len()).map_err(|_| Error::Validation("tensor name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for &d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in params.tensors() {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Corruption(format!("checkpoint truncated at offset {pos}")));
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(4).map_err(|_| Error::Format("checkpoint too short".into()))? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().expect("2"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().expect("2")) as usize;
        let name =
            String::from_utf8(take(len)?.to_vec()).map_err(|_| Error::Corruption("tensor name is not utf-8".into()))?;
        let ndim = take(1)?[0] as usize;
        let dims = (0..ndim)
            .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize))
            .collect::<Result<Vec<_>>>()?;
        header.push((name, dims));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, dims) in header {
        let n: usize = dims.iter().product();
        let raw = take(n * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("tensor {name} has non-finite values")));
        }
        tensors.push((name, dims, data));
    }
    if pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes in checkpoint",
            bytes.len() - pos
        )));
    }
    Ok(tensors)
}

pub fn save<P: ParamSet>(path: &Path, params: &P, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(params)?)?;
    write_json(&meta_path(path), meta)
}

fn read(path: &Path) -> Result<(Vec<NamedTensor>, Option<CheckpointMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = decode(&bytes)?;
    let mpath = meta_path(path);
    let meta = if mpath.exists() { Some(read_json(&mpath)?) } else { None };
    Ok((tensors, meta))
}

pub fn load_fusion(path: &Path) -> Result<FusionParams> {
    let (tensors, meta) = read(path)?;
    if let Some(m) = meta {
        if m.model != ModelKind::Fusion {
            return Err(Error::Format(format!("{} is not a fusion checkpoint", path.display())));
        }
    }
    FusionParams::from_tensors(&tensors)
}

pub fn load_classifier(path: &Path) -> Result<ClassifierHead> {
    let (tensors, meta) = read(path)?;
    let pooling = match meta.map(|m| m.model) {
        Some(ModelKind::Classifier { pooling }) => pooling,
        Some(ModelKind::Fusion) => {
            return Err(Error::Format(format!(
                "{} is not a classifier checkpoint",
                path.display()
            )))
        }
        None => Pooling::Mean,
    };
    ClassifierHead::from_tensors(&tensors, pooling)
}
