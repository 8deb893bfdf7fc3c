//! Chunk texts plus their index, published as immutable snapshots.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingVector;
use super::index::{ChunkRef, IndexError, VectorIndex};

const INDEX_FILE: &str = "index.glix";
const TEXTS_FILE: &str = "chunks.json";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSnapshot {
    pub index: VectorIndex,
    pub texts: BTreeMap<ChunkRef, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedChunk {
    pub rank: usize,
    pub entry_id: u64,
    pub chunk: ChunkRef,
    pub similarity: f64,
    pub text: String,
}

#[derive(Serialize, Deserialize)]
struct TextRecord {
    chunk: ChunkRef,
    text: String,
}

impl CorpusSnapshot {
    pub fn retrieve(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievedChunk>, IndexError> {
        Ok(self
            .index
            .top_k(query, k)?
            .into_iter()
            .enumerate()
            .map(|(i, hit)| RetrievedChunk {
                rank: i + 1,
                entry_id: hit.entry_id,
                text: self.texts.get(&hit.chunk).cloned().unwrap_or_default(),
                chunk: hit.chunk,
                similarity: hit.similarity,
            })
            .collect())
    }

    /// Drops every entry and text belonging to `doc_id`.
    pub fn remove_doc(&mut self, doc_id: &str) -> usize {
        self.texts.retain(|k, _| k.doc_id != doc_id);
        self.index.remove_doc(doc_id)
    }

    pub fn add(&mut self, chunk: ChunkRef, text: String, vector: EmbeddingVector) -> Result<u64, IndexError> {
        let id = self.index.insert(chunk.clone(), vector)?;
        self.texts.insert(chunk, text);
        Ok(id)
    }
}

/// Readers take the current snapshot and keep it for the whole query;
/// writers build a modified copy and publish it in one swap.
#[derive(Debug)]
pub struct Corpus {
    current: RwLock<Arc<CorpusSnapshot>>,
    writer: Mutex<()>,
}

impl Corpus {
    pub fn new(dims: usize) -> Result<Self, IndexError> {
        Ok(Self::from_snapshot(CorpusSnapshot {
            index: VectorIndex::new(dims)?,
            texts: BTreeMap::new(),
        }))
    }

    pub fn from_snapshot(snapshot: CorpusSnapshot) -> Self {
        Self {
            current: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<CorpusSnapshot> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Applies `edit` to a private copy and publishes it if it succeeds.
    pub fn update<T, E>(&self, edit: impl FnOnce(&mut CorpusSnapshot) -> Result<T, E>) -> Result<T, E> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut next = (*self.snapshot()).clone();
        let out = edit(&mut next)?;
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        std::fs::create_dir_all(dir)?;
        let snap = self.snapshot();
        snap.index.save(&dir.join(INDEX_FILE))?;
        let records: Vec<TextRecord> = snap
            .texts
            .iter()
            .map(|(chunk, text)| TextRecord {
                chunk: chunk.clone(),
                text: text.clone(),
            })
            .collect();
        let json = serde_json::to_vec_pretty(&records).map_err(std::io::Error::other)?;
        let tmp = dir.join(format!("{TEXTS_FILE}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, dir.join(TEXTS_FILE))?;
        Ok(())
    }

    /// Loads a saved corpus, or returns an empty one of `dims` if `dir` holds
    /// none.
    pub fn load_or_new(dir: &Path, dims: usize) -> Result<Self, IndexError> {
        let index_path = dir.join(INDEX_FILE);
        if !index_path.exists() {
            return Self::new(dims);
        }
        let index = VectorIndex::load(&index_path)?;
        if index.dims() != dims {
            return Err(IndexError::DimsMismatch {
                expected: dims,
                actual: index.dims(),
            });
        }
        let texts_path = dir.join(TEXTS_FILE);
        let texts = if texts_path.exists() {
            let records: Vec<TextRecord> = serde_json::from_slice(&std::fs::read(texts_path)?)
                .map_err(|e| IndexError::Checksum(format!("chunk texts: {e}")))?;
            records.into_iter().map(|r| (r.chunk, r.text)).collect()
        } else {
            BTreeMap::new()
        };
        Ok(Self::from_snapshot(CorpusSnapshot { index, texts }))
    }
}
