//! Exhaustive cosine index and its on-disk format.
//!
//! File layout, all integers and reals little-endian:
//!
//! ```text
//! magic      4 bytes  "GLIX"
//! version    u32
//! dims       u32
//! count      u64
//! next_id    u64
//! checksum   u64      first 8 bytes of SHA-256 over all records
//! records    count × (entry_id u64, chunk_index u32, kind u8,
//!                     doc_id_len u16, doc_id [u8; 128], values f64 × dims)
//! ```

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::embed::EmbeddingVector;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const MAX_DOC_ID_BYTES: usize = 128;

const MAGIC: &[u8; 4] = b"GLIX";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index dims must be positive")]
    ZeroDims,
    #[error("vector has {actual} dims, index has {expected}")]
    DimsMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector cannot be indexed or queried")]
    ZeroNorm,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index is empty")]
    Empty,
    #[error("doc id {0:?} exceeds {MAX_DOC_ID_BYTES} bytes or is empty")]
    DocId(String),
    #[error("duplicate entry id {0}")]
    DuplicateId(u64),
    #[error("unsupported index format version {found} (expected {INDEX_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("index file is corrupt: {0}")]
    Checksum(String),
    #[error("index io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Original,
    Summary,
}

impl ChunkKind {
    fn code(self) -> u8 {
        match self {
            ChunkKind::Original => 0,
            ChunkKind::Summary => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ChunkKind::Original),
            1 => Some(ChunkKind::Summary),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: String,
    pub index: u32,
    pub kind: ChunkKind,
}

impl ChunkRef {
    pub fn new(doc_id: impl Into<String>, index: u32, kind: ChunkKind) -> Self {
        Self {
            doc_id: doc_id.into(),
            index,
            kind,
        }
    }
}

impl std::fmt::Display for ChunkRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.kind {
            ChunkKind::Original => "original",
            ChunkKind::Summary => "summary",
        };
        write!(f, "{}#{}/{}", self.doc_id, self.index, kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub entry_id: u64,
    pub chunk: ChunkRef,
    pub vector: EmbeddingVector,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub entry_id: u64,
    pub chunk: ChunkRef,
    pub similarity: f64,
}

/// Cosine similarity; `None` when either vector has zero norm or dims differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Option<f64> {
    if a.dims() != b.dims() {
        return None;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a.values(), b.values()) / (na * nb))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact nearest-neighbour index over cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dims: usize,
    entries: Vec<IndexEntry>,
    next_id: u64,
}

impl VectorIndex {
    pub fn new(dims: usize) -> Result<Self, IndexError> {
        if dims == 0 {
            return Err(IndexError::ZeroDims);
        }
        Ok(Self {
            dims,
            entries: Vec::new(),
            next_id: 1,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Adds a vector under a fresh entry id.
    pub fn insert(&mut self, chunk: ChunkRef, vector: EmbeddingVector) -> Result<u64, IndexError> {
        let id = self.next_id;
        self.insert_with_id(id, chunk, vector)?;
        Ok(id)
    }

    pub fn insert_with_id(
        &mut self,
        entry_id: u64,
        chunk: ChunkRef,
        vector: EmbeddingVector,
    ) -> Result<(), IndexError> {
        if vector.dims() != self.dims {
            return Err(IndexError::DimsMismatch {
                expected: self.dims,
                actual: vector.dims(),
            });
        }
        if chunk.doc_id.is_empty() || chunk.doc_id.len() > MAX_DOC_ID_BYTES {
            return Err(IndexError::DocId(chunk.doc_id));
        }
        let norm = vector.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        if self.entries.iter().any(|e| e.entry_id == entry_id) {
            return Err(IndexError::DuplicateId(entry_id));
        }
        self.entries.push(IndexEntry {
            entry_id,
            chunk,
            vector,
            norm,
        });
        self.next_id = self.next_id.max(entry_id + 1);
        Ok(())
    }

    /// Removes every entry of `doc_id`, returning how many were removed.
    pub fn remove_doc(&mut self, doc_id: &str) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| e.chunk.doc_id != doc_id);
        before - self.entries.len()
    }

    /// The `min(k, len)` most similar entries, by similarity descending with
    /// ties broken by ascending entry id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if query.dims() != self.dims {
            return Err(IndexError::DimsMismatch {
                expected: self.dims,
                actual: query.dims(),
            });
        }
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        let qnorm = query.norm();
        if qnorm == 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (dot(query.values(), e.vector.values()) / (qnorm * e.norm), i))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.entries[a.1].entry_id.cmp(&self.entries[b.1].entry_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(sim, i)| RetrievalHit {
                entry_id: self.entries[i].entry_id,
                chunk: self.entries[i].chunk.clone(),
                similarity: sim.clamp(-1.0, 1.0),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = Vec::with_capacity(self.entries.len() * self.record_len());
        for e in &self.entries {
            records.extend_from_slice(&e.entry_id.to_le_bytes());
            records.extend_from_slice(&e.chunk.index.to_le_bytes());
            records.push(e.chunk.kind.code());
            let id = e.chunk.doc_id.as_bytes();
            records.extend_from_slice(&(id.len() as u16).to_le_bytes());
            let mut padded = [0u8; MAX_DOC_ID_BYTES];
            padded[..id.len()].copy_from_slice(id);
            records.extend_from_slice(&padded);
            for v in e.vector.values() {
                records.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + records.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.next_id.to_le_bytes());
        out.extend_from_slice(&checksum(&records).to_le_bytes());
        out.extend_from_slice(&records);
        out
    }

    fn record_len(&self) -> usize {
        8 + 4 + 1 + 2 + MAX_DOC_ID_BYTES + 8 * self.dims
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::Checksum(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(IndexError::Checksum("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap_or_default());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap_or_default());
        let version = u32_at(4);
        if version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Version { found: version });
        }
        let dims = u32_at(8) as usize;
        let count = u64_at(12) as usize;
        let next_id = u64_at(20);
        let stored = u64_at(28);
        let mut index = VectorIndex::new(dims)?;
        let records = &bytes[HEADER_LEN..];
        let expected = count.checked_mul(index.record_len());
        if expected != Some(records.len()) {
            return Err(IndexError::Checksum(format!(
                "expected {count} records ({} bytes), found {} bytes",
                expected.map_or_else(|| "overflow".to_string(), |n| n.to_string()),
                records.len()
            )));
        }
        let actual = checksum(records);
        if actual != stored {
            return Err(IndexError::Checksum(format!(
                "checksum {actual:016x} does not match header {stored:016x}"
            )));
        }
        for rec in records.chunks_exact(index.record_len()) {
            let entry_id = u64::from_le_bytes(rec[0..8].try_into().unwrap_or_default());
            let chunk_index = u32::from_le_bytes(rec[8..12].try_into().unwrap_or_default());
            let kind = ChunkKind::from_code(rec[12])
                .ok_or_else(|| IndexError::Checksum(format!("unknown chunk kind {}", rec[12])))?;
            let id_len = u16::from_le_bytes([rec[13], rec[14]]) as usize;
            if id_len > MAX_DOC_ID_BYTES {
                return Err(IndexError::Checksum("doc id length out of range".into()));
            }
            let doc_id = std::str::from_utf8(&rec[15..15 + id_len])
                .map_err(|_| IndexError::Checksum("doc id is not utf-8".into()))?
                .to_string();
            let start = 15 + MAX_DOC_ID_BYTES;
            let values = rec[start..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap_or_default()))
                .collect();
            let vector = EmbeddingVector::new(values)
                .map_err(|e| IndexError::Checksum(format!("entry {entry_id}: {e}")))?;
            index.insert_with_id(entry_id, ChunkRef::new(doc_id, chunk_index, kind), vector)?;
        }
        index.next_id = index.next_id.max(next_id);
        Ok(index)
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn checksum(records: &[u8]) -> u64 {
    let digest = Sha256::digest(records);
    u64::from_le_bytes(digest[..8].try_into().unwrap_or_default())
}
