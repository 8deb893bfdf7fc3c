//! Embedding and exact cosine-similarity retrieval.

mod corpus;
mod embed;
mod index;

pub use corpus::{Corpus, CorpusSnapshot, RetrievedChunk};
pub use embed::{EmbedError, Embedder, EmbeddingVector, HashEmbedder, OpenAiEmbedder, OpenAiEmbedderConfig};
pub use index::{
    cosine, ChunkKind, ChunkRef, IndexEntry, IndexError, RetrievalHit, VectorIndex, INDEX_FORMAT_VERSION,
    MAX_DOC_ID_BYTES,
};
