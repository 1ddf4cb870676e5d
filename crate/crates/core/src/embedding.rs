//! Precomputed embedding tables and the cosine primitive.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "TFCV" | version u16 = 1 | dim u32 | count u64
//! per record: id_len u16 | id utf-8 | kind u8 | frames u32 | frames*dim f32
//! ```
//!
//! `kind` is 0 (video), 1 (text) or 2 (frame sequence); `frames` is 1 unless
//! the record is a frame sequence. A `<stem>.manifest.json` sidecar lists ids
//! and kinds for humans and tooling, but the binary file is authoritative.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::dot;

pub const MAGIC: &[u8; 4] = b"TFCV";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Video,
    Text,
    FrameSequence,
}

impl EmbeddingKind {
    fn code(self) -> u8 {
        match self {
            EmbeddingKind::Video => 0,
            EmbeddingKind::Text => 1,
            EmbeddingKind::FrameSequence => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(EmbeddingKind::Video),
            1 => Ok(EmbeddingKind::Text),
            2 => Ok(EmbeddingKind::FrameSequence),
            other => Err(Error::Format(format!("unknown record kind {other}"))),
        }
    }
}

/// One embedding. Frame-sequence records keep their `frames x dim` rows and
/// expose the mean-pooled row as `vector`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    id: String,
    kind: EmbeddingKind,
    vector: Vec<f32>,
    frames: Option<Vec<f32>>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, kind: EmbeddingKind, vector: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if kind == EmbeddingKind::FrameSequence {
            let dim = vector.len();
            return Self::frame_sequence(id, dim, vector);
        }
        validate_row(&id, &vector)?;
        Ok(EmbeddingRecord {
            id,
            kind,
            vector,
            frames: None,
        })
    }

    /// `frames` holds `T x dim` values in row-major order.
    pub fn frame_sequence(id: impl Into<String>, dim: usize, frames: Vec<f32>) -> Result<Self> {
        let id = id.into();
        if dim == 0 || frames.is_empty() || !frames.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "record {id}: {} frame values do not form rows of width {dim}",
                frames.len()
            )));
        }
        for row in frames.chunks(dim) {
            validate_row(&id, row)?;
        }
        let t = frames.len() / dim;
        let mut pooled = vec![0.0f64; dim];
        for row in frames.chunks(dim) {
            for (p, &x) in pooled.iter_mut().zip(row) {
                *p += x as f64;
            }
        }
        let vector: Vec<f32> = pooled.iter().map(|p| (p / t as f64) as f32).collect();
        validate_row(&id, &vector)?;
        Ok(EmbeddingRecord {
            id,
            kind: EmbeddingKind::FrameSequence,
            vector,
            frames: Some(frames),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn vector_f64(&self) -> Vec<f64> {
        self.vector.iter().map(|&x| x as f64).collect()
    }

    pub fn frame_count(&self) -> usize {
        match &self.frames {
            Some(f) => f.len() / self.dim(),
            None => 1,
        }
    }

    /// Frame rows; a single row for non-sequence records.
    pub fn frame_rows(&self) -> impl Iterator<Item = &[f32]> {
        let dim = self.dim();
        self.frames.as_deref().unwrap_or(&self.vector).chunks(dim)
    }
}

fn validate_row(id: &str, row: &[f32]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::Validation(format!("record {id}: empty vector")));
    }
    if let Some(pos) = row.iter().position(|x| !x.is_finite()) {
        return Err(Error::Validation(format!(
            "record {id}: non-finite value at coordinate {pos}"
        )));
    }
    if row.iter().all(|&x| x == 0.0) {
        return Err(Error::Validation(format!("record {id}: zero vector")));
    }
    Ok(())
}

/// Id-indexed collection of records sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut table = EmbeddingTable::new(dim)?;
        for r in records {
            table.push(r)?;
        }
        Ok(table)
    }

    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.dim() != self.dim {
            return Err(Error::Shape(format!(
                "record {} has dim {}, table dim is {}",
                record.id,
                record.dim(),
                self.dim
            )));
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::Validation(format!("duplicate id {}", record.id)));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<&EmbeddingRecord> {
        self.get(id)
            .ok_or_else(|| Error::Lookup(format!("no embedding for id {id:?}")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    /// Serialize to the binary layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload: usize = self
            .records
            .iter()
            .map(|r| 2 + r.id.len() + 1 + 4 + 4 * r.frame_count() * self.dim)
            .sum();
        let mut out = Vec::with_capacity(18 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            let id_len = u16::try_from(r.id.len())
                .map_err(|_| Error::Validation(format!("id too long: {} bytes", r.id.len())))?;
            out.extend_from_slice(&id_len.to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            out.push(r.kind.code());
            out.extend_from_slice(&(r.frame_count() as u32).to_le_bytes());
            for row in r.frame_rows() {
                for x in row {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur
            .take(4)
            .map_err(|_| Error::Format("file too short for header".into()))?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = cur.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let mut table = EmbeddingTable::new(dim)?;
        for n in 0..count {
            let id_len = cur.u16()? as usize;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| Error::Corruption(format!("record {n}: id is not utf-8")))?
                .to_string();
            let kind = EmbeddingKind::from_code(cur.u8()?)?;
            let frames = cur.u32()? as usize;
            if frames == 0 || (kind != EmbeddingKind::FrameSequence && frames != 1) {
                return Err(Error::Corruption(format!(
                    "record {id}: frame count {frames} invalid for {kind:?}"
                )));
            }
            let raw = cur.take(frames * dim * 4)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let record = if kind == EmbeddingKind::FrameSequence {
                EmbeddingRecord::frame_sequence(id, dim, values)?
            } else {
                EmbeddingRecord::new(id, kind, values)?
            };
            table.push(record)?;
        }
        if cur.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after {count} records of dim {dim}",
                bytes.len() - cur.pos
            )));
        }
        Ok(table)
    }

    /// SHA-256 of the serialized table, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption(format!(
                "payload truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: EmbeddingKind,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub dim: usize,
    pub count: usize,
    pub records: Vec<ManifestEntry>,
    #[serde(default)]
    pub source: serde_json::Value,
}

impl Manifest {
    pub fn for_table(table: &EmbeddingTable, source: serde_json::Value) -> Self {
        Manifest {
            format: "TFCV".into(),
            version: FORMAT_VERSION,
            dim: table.dim,
            count: table.len(),
            records: table
                .records
                .iter()
                .map(|r| ManifestEntry {
                    id: r.id.clone(),
                    kind: r.kind,
                    frames: r.frame_count(),
                })
                .collect(),
            source,
        }
    }

    /// Differences between this manifest and the authoritative table.
    pub fn discrepancies(&self, table: &EmbeddingTable) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim != table.dim {
            out.push(format!("manifest dim {} vs table dim {}", self.dim, table.dim));
        }
        if self.records.len() != table.len() {
            out.push(format!(
                "manifest lists {} records, table has {}",
                self.records.len(),
                table.len()
            ));
        }
        for m in &self.records {
            match table.get(&m.id) {
                None => out.push(format!("manifest id {} missing from table", m.id)),
                Some(r) if r.kind != m.kind || r.frame_count() != m.frames => {
                    out.push(format!("manifest entry for {} disagrees with table", m.id))
                }
                _ => {}
            }
        }
        out
    }
}

/// `foo.tfcv` -> `foo.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn load_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Option<Manifest>> {
    let mpath = manifest_path(path.as_ref());
    if !mpath.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::json(mpath.display().to_string(), e))
}

pub fn save_table(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    save_table_with_source(path, table, serde_json::Value::Null)
}

pub fn save_table_with_source(path: impl AsRef<Path>, table: &EmbeddingTable, source: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &table.to_bytes()?)?;
    let manifest = Manifest::for_table(table, source);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("manifest", e))?;
    write_atomic(&manifest_path(path), &json)
}

/// Unit-L2 copy of `v`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = dot(v, v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if !(nu > 0.0) || !(nv > 0.0) {
        return Err(Error::Degenerate("cosine with a zero vector".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
