#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use glossa_core::context::ContextRegistry;
use glossa_core::gateway::{Gateway, ScriptedBackend};
use glossa_core::jargon::JargonStore;
use glossa_core::retriever::{
    ChunkKind, ChunkRef, CorpusSnapshot, EmbedError, Embedder, EmbeddingVector, HashEmbedder, VectorIndex,
};

pub const PUC_QUESTION: &str = "What is the PUC architecture of Samsung or Hynix NAND chip?";

pub const RELEVANT_CHUNK: &str = "Peripheral Under Cell places the CMOS peripheral circuits underneath the \
    memory cell array. Moving the peripheral circuits below the cell array shrinks the die area of 3D NAND flash.";

pub const DISTRACTOR_CHUNK: &str = "PUC architecture at Samsung and Hynix: the Process Unit Controller \
    schedules each chip lot through the fab. Samsung and Hynix chip plants use a PUC architecture for lot dispatch.";

pub const EMBED_DIMS: usize = 256;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn registry() -> ContextRegistry {
    ContextRegistry::from_file(&fixture("contexts.toml")).unwrap()
}

pub fn dictionary() -> JargonStore {
    let store = JargonStore::in_memory().unwrap();
    store.import_path(&fixture("dictionary.tsv")).unwrap();
    store
}

/// Embedder wrapper that counts calls.
pub struct CountingEmbedder {
    pub inner: HashEmbedder,
    pub calls: AtomicUsize,
}

impl CountingEmbedder {
    pub fn new() -> Self {
        Self {
            inner: HashEmbedder::new("hash", EMBED_DIMS, 7),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Embedder for CountingEmbedder {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn dims(&self) -> usize {
        self.inner.dims()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }
}

/// Index with the relevant chunk first and the distractor second.
pub fn disambiguation_corpus(embedder: &dyn Embedder) -> CorpusSnapshot {
    let mut snap = CorpusSnapshot {
        index: VectorIndex::new(embedder.dims()).unwrap(),
        texts: Default::default(),
    };
    for (doc, text) in [("nand-puc", RELEVANT_CHUNK), ("fab-dispatch", DISTRACTOR_CHUNK)] {
        snap.add(
            ChunkRef::new(doc, 0, ChunkKind::Original),
            text.to_string(),
            embedder.embed(text).unwrap(),
        )
        .unwrap();
    }
    snap
}

/// Backend answering the jargon, context and answer prompts for one question.
pub fn pipeline_backend(id: &str, jargon: &str, context: &str, answer: &str) -> Arc<ScriptedBackend> {
    Arc::new(
        ScriptedBackend::new(id)
            .on("Identify every jargon term", jargon)
            .on(
                "Identify the context of the question",
                format!("The question is about this domain.\nContext: {context}"),
            )
            .on("Answer the question using the documents", answer),
    )
}

pub fn gateway(backend: Arc<ScriptedBackend>) -> Gateway {
    Gateway::new().with_backend(backend)
}
