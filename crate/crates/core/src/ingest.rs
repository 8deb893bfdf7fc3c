//! Offline document augmentation: chunk extracted text, write an expert
//! summary of each chunk, and index originals and summaries side by side.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, LlmRequest};
use crate::retriever::{ChunkKind, ChunkRef, Corpus, Embedder, IndexError, MAX_DOC_ID_BYTES};
use crate::templates::TemplateSet;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document id {0:?} must be 1-{MAX_DOC_ID_BYTES} bytes")]
    InvalidId(String),
    #[error("document `{0}` has no text")]
    EmptyDocument(String),
    #[error("max_tokens must be at least 1")]
    ZeroBudget,
    #[error("a single word of `{doc_id}` counts {tokens} tokens, above the budget of {max_tokens}")]
    BudgetTooSmall {
        doc_id: String,
        tokens: usize,
        max_tokens: usize,
    },
    #[error("summary of {chunk} pending after {attempts} attempts: {reason}")]
    SummaryPending {
        chunk: ChunkRef,
        attempts: u32,
        reason: String,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Pre-extracted document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    #[serde(default)]
    pub uri: Option<String>,
    pub text: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl SourceDocument {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, IngestError> {
        let doc = Self {
            id: id.into(),
            uri: None,
            text: text.into(),
            metadata: BTreeMap::new(),
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.id.trim().is_empty() || self.id.len() > MAX_DOC_ID_BYTES {
            return Err(IngestError::InvalidId(self.id.clone()));
        }
        if self.text.trim().is_empty() {
            return Err(IngestError::EmptyDocument(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: u32,
    pub text: String,
    pub token_count: usize,
}

impl Chunk {
    pub fn chunk_ref(&self) -> ChunkRef {
        ChunkRef::new(self.doc_id.clone(), self.index, ChunkKind::Original)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedChunk {
    /// The original chunk this text derives from.
    pub source: ChunkRef,
    pub kind: ChunkKind,
    pub text: String,
}

impl AugmentedChunk {
    pub fn original(chunk: &Chunk) -> Self {
        Self {
            source: chunk.chunk_ref(),
            kind: ChunkKind::Original,
            text: chunk.text.clone(),
        }
    }

    pub fn index_ref(&self) -> ChunkRef {
        ChunkRef::new(self.source.doc_id.clone(), self.source.index, self.kind)
    }
}

/// Token estimate in two stages: `units` counts something additive (two
/// texts joined at whitespace have the sum of their units), `tokens` maps a
/// unit count to tokens. The chunker relies on the additivity to stay linear.
pub trait TokenCounter: Send + Sync {
    fn units(&self, text: &str) -> usize;
    fn tokens(&self, units: usize) -> usize;

    fn count(&self, text: &str) -> usize {
        self.tokens(self.units(text))
    }
}

/// One token per whitespace-separated word.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCounter;

impl TokenCounter for WordCounter {
    fn units(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn tokens(&self, units: usize) -> usize {
        units
    }
}

/// Whitespace words times a factor, rounded up. The default factor 1.3
/// approximates subword tokenizers on English text.
#[derive(Debug, Clone, Copy)]
pub struct ScaledWordCounter {
    pub factor: f64,
}

impl Default for ScaledWordCounter {
    fn default() -> Self {
        Self { factor: 1.3 }
    }
}

impl TokenCounter for ScaledWordCounter {
    fn units(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn tokens(&self, units: usize) -> usize {
        (units as f64 * self.factor).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Paragraph,
    Sentence,
    Word,
}

/// Splits `text` into consecutive pieces whose concatenation is `text`.
fn split_at_level(text: &str, level: Level) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut cuts = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let boundary_end = match level {
            Level::Paragraph if bytes[i] == b'\n' => {
                // A blank line: newline, optional spaces, newline.
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j] == b' ' || bytes[j] == b'\t' || bytes[j] == b'\r') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'\n' {
                    let mut k = j;
                    while k < bytes.len() && bytes[k].is_ascii_whitespace() {
                        k += 1;
                    }
                    Some(k)
                } else {
                    None
                }
            }
            Level::Sentence
                if matches!(bytes[i], b'.' | b'!' | b'?')
                    && bytes.get(i + 1).is_some_and(|b| b.is_ascii_whitespace()) =>
            {
                let mut k = i + 1;
                while k < bytes.len() && bytes[k].is_ascii_whitespace() {
                    k += 1;
                }
                Some(k)
            }
            Level::Word if bytes[i].is_ascii_whitespace() => {
                let mut k = i;
                while k < bytes.len() && bytes[k].is_ascii_whitespace() {
                    k += 1;
                }
                // Leading whitespace stays attached to the first word.
                (i > 0).then_some(k)
            }
            _ => None,
        };
        match boundary_end {
            Some(end) if end < bytes.len() => {
                cuts.push(end);
                i = end;
            }
            Some(end) => i = end,
            None => i += 1,
        }
    }
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for cut in cuts {
        out.push(&text[start..cut]);
        start = cut;
    }
    out.push(&text[start..]);
    out
}

struct Packer<'a> {
    doc_id: &'a str,
    max_tokens: usize,
    counter: &'a dyn TokenCounter,
    done: Vec<String>,
    current: String,
    current_units: usize,
}

impl Packer<'_> {
    fn flush(&mut self) {
        if !self.current.is_empty() {
            self.done.push(std::mem::take(&mut self.current));
        }
        self.current_units = 0;
    }

    fn push(&mut self, piece: &str, level: Level) -> Result<(), IngestError> {
        let piece_units = self.counter.units(piece);
        let joins_at_space = self.current.ends_with(char::is_whitespace)
            || piece.starts_with(char::is_whitespace)
            || self.current.is_empty();
        let joined_units = if joins_at_space {
            self.current_units + piece_units
        } else {
            self.counter.units(&format!("{}{piece}", self.current))
        };
        if self.counter.tokens(joined_units) <= self.max_tokens {
            self.current.push_str(piece);
            self.current_units = joined_units;
            return Ok(());
        }
        if self.counter.tokens(piece_units) <= self.max_tokens {
            self.flush();
            self.current = piece.to_string();
            self.current_units = piece_units;
            return Ok(());
        }
        let next = match level {
            Level::Paragraph => Level::Sentence,
            Level::Sentence => Level::Word,
            Level::Word => {
                return Err(IngestError::BudgetTooSmall {
                    doc_id: self.doc_id.to_string(),
                    tokens: self.counter.count(piece),
                    max_tokens: self.max_tokens,
                })
            }
        };
        self.flush();
        for sub in split_at_level(piece, next) {
            self.push(sub, next)?;
        }
        Ok(())
    }
}

/// Greedy split of `doc` into chunks of at most `max_tokens` tokens.
///
/// Cuts prefer paragraph breaks, then sentence ends, then whitespace. The
/// chunks concatenate back to the document text byte for byte.
pub fn chunk_document(
    doc: &SourceDocument,
    max_tokens: usize,
    counter: &dyn TokenCounter,
) -> Result<Vec<Chunk>, IngestError> {
    doc.validate()?;
    if max_tokens == 0 {
        return Err(IngestError::ZeroBudget);
    }
    let mut packer = Packer {
        doc_id: &doc.id,
        max_tokens,
        counter,
        done: Vec::new(),
        current: String::new(),
        current_units: 0,
    };
    for piece in split_at_level(&doc.text, Level::Paragraph) {
        packer.push(piece, Level::Paragraph)?;
    }
    packer.flush();
    Ok(packer
        .done
        .into_iter()
        .enumerate()
        .map(|(i, text)| Chunk {
            doc_id: doc.id.clone(),
            index: i as u32,
            token_count: counter.count(&text),
            text,
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SummaryOptions {
    pub backend_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_retries: u32,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            backend_id: "default".into(),
            temperature: 0.0,
            max_output_tokens: 1024,
            max_retries: 2,
        }
    }
}

/// Writes the domain-expert summary of one chunk.
///
/// Backend failures and blank replies are retried; when retries run out the
/// chunk's summary is reported as pending.
pub fn summarize_chunk(
    chunk: &Chunk,
    gateway: &Gateway,
    templates: &TemplateSet,
    options: &SummaryOptions,
) -> Result<AugmentedChunk, IngestError> {
    let prompt = templates
        .summarize
        .render(&[("chunk", chunk.text.as_str())])
        .map_err(|e| IngestError::SummaryPending {
            chunk: chunk.chunk_ref(),
            attempts: 0,
            reason: e.to_string(),
        })?;
    let request = LlmRequest::new(options.backend_id.clone(), prompt)
        .with_sampling(options.temperature, options.max_output_tokens);
    let mut reason = String::new();
    let attempts = options.max_retries + 1;
    for _ in 0..attempts {
        match gateway.complete(&request) {
            Ok(resp) if !resp.text.trim().is_empty() => {
                return Ok(AugmentedChunk {
                    source: chunk.chunk_ref(),
                    kind: ChunkKind::Summary,
                    text: resp.text.trim().to_string(),
                })
            }
            Ok(_) => reason = "empty summary".into(),
            Err(e) => reason = e.to_string(),
        }
    }
    Err(IngestError::SummaryPending {
        chunk: chunk.chunk_ref(),
        attempts,
        reason,
    })
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_tokens: usize,
    pub summarize: bool,
    pub summary: SummaryOptions,
    /// Upper bound on concurrent summary requests.
    pub parallelism: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_tokens: 4000,
            summarize: true,
            summary: SummaryOptions::default(),
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DocumentReport {
    pub doc_id: String,
    pub chunks: usize,
    pub summaries: usize,
    /// Chunk indices whose summary is pending.
    pub pending_summaries: Vec<u32>,
    pub index_entries: usize,
    /// Entries of an earlier ingest of the same id that were replaced.
    pub replaced_entries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub documents: Vec<DocumentReport>,
    pub total_chunks: usize,
    pub total_summaries: usize,
    pub total_pending: usize,
    pub total_index_entries: usize,
    pub failed_documents: usize,
}

impl IngestReport {
    fn push(&mut self, doc: DocumentReport) {
        self.total_chunks += doc.chunks;
        self.total_summaries += doc.summaries;
        self.total_pending += doc.pending_summaries.len();
        self.total_index_entries += doc.index_entries;
        self.failed_documents += usize::from(doc.error.is_some());
        self.documents.push(doc);
    }
}

pub struct Ingestor<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn Embedder,
    pub corpus: &'a Corpus,
    pub templates: &'a TemplateSet,
    pub counter: &'a dyn TokenCounter,
    pub options: IngestOptions,
}

impl Ingestor<'_> {
    /// Ingests every document. A document that fails is reported and leaves
    /// whatever was indexed for its id before untouched.
    pub fn ingest(&self, docs: &[SourceDocument]) -> IngestReport {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.options.parallelism.max(1))
            .build();
        let mut report = IngestReport::default();
        for doc in docs {
            let result = match &pool {
                Ok(pool) => pool.install(|| self.ingest_one(doc)),
                Err(_) => self.ingest_one(doc),
            };
            report.push(result.unwrap_or_else(|(mut partial, err)| {
                partial.error = Some(err.to_string());
                partial
            }));
        }
        report
    }

    fn ingest_one(&self, doc: &SourceDocument) -> Result<DocumentReport, (DocumentReport, IngestError)> {
        let mut report = DocumentReport {
            doc_id: doc.id.clone(),
            ..Default::default()
        };
        let chunks = match chunk_document(doc, self.options.max_tokens, self.counter) {
            Ok(c) => c,
            Err(e) => return Err((report, e)),
        };
        report.chunks = chunks.len();

        let mut items: Vec<AugmentedChunk> = chunks.iter().map(AugmentedChunk::original).collect();
        if self.options.summarize {
            let summaries: Vec<Result<AugmentedChunk, IngestError>> = chunks
                .par_iter()
                .map(|c| summarize_chunk(c, self.gateway, self.templates, &self.options.summary))
                .collect();
            for (chunk, s) in chunks.iter().zip(summaries) {
                match s {
                    Ok(summary) => items.push(summary),
                    Err(_) => report.pending_summaries.push(chunk.index),
                }
            }
            report.summaries = chunks.len() - report.pending_summaries.len();
        }

        let mut embedded = Vec::with_capacity(items.len());
        for item in items {
            match self.embedder.embed(&item.text) {
                Ok(v) => embedded.push((item, v)),
                Err(e) => {
                    let err = IngestError::Index(IndexError::Io(std::io::Error::other(format!(
                        "embedding {}: {e}",
                        item.index_ref()
                    ))));
                    return Err((report, err));
                }
            }
        }
        let outcome = self.corpus.update(|snap| -> Result<(usize, usize), IndexError> {
            let replaced = snap.remove_doc(&doc.id);
            let mut added = 0;
            for (item, vector) in embedded {
                snap.add(item.index_ref(), item.text, vector)?;
                added += 1;
            }
            Ok((replaced, added))
        });
        match outcome {
            Ok((replaced, added)) => {
                report.replaced_entries = replaced;
                report.index_entries = added;
                Ok(report)
            }
            Err(e) => Err((report, e.into())),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    #[serde(rename = "document", default)]
    documents: Vec<ManifestEntry>,
}

/// One manifest record: a document given by file path or inline text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub uri: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ManifestEntry {
    /// Resolves the entry, reading `path` relative to `base`.
    pub fn resolve(&self, base: &Path) -> Result<SourceDocument, IngestError> {
        let bad = |reason: String| IngestError::Manifest {
            path: base.display().to_string(),
            reason,
        };
        let (text, uri) = match (&self.path, &self.text) {
            (Some(p), None) => {
                let full = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| bad(format!("document `{}`: {}: {e}", self.id, full.display())))?;
                (text, self.uri.clone().or_else(|| Some(full.display().to_string())))
            }
            (None, Some(t)) => (t.clone(), self.uri.clone()),
            _ => return Err(bad(format!("document `{}` needs exactly one of `path` or `text`", self.id))),
        };
        let doc = SourceDocument {
            id: self.id.clone(),
            uri,
            text,
            metadata: self.metadata.clone(),
        };
        doc.validate()?;
        Ok(doc)
    }
}

/// Loads documents from a TOML manifest (`[[document]]` records with `id`,
/// `path` or `text`, optional `uri` and `metadata`) or from a directory of
/// `.txt`/`.md` files, whose stems become document ids.
pub fn load_documents(path: &Path) -> Result<Vec<SourceDocument>, IngestError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("txt") || e.eq_ignore_ascii_case("md"))
            })
            .collect();
        files.sort();
        return files
            .iter()
            .map(|f| {
                let id = f
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let doc = SourceDocument {
                    id,
                    uri: Some(f.display().to_string()),
                    text: std::fs::read_to_string(f)?,
                    metadata: BTreeMap::new(),
                };
                doc.validate()?;
                Ok(doc)
            })
            .collect();
    }
    let source = std::fs::read_to_string(path)?;
    let manifest: ManifestFile = toml::from_str(&source).map_err(|e| IngestError::Manifest {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.documents.iter().map(|d| d.resolve(base)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Matcher, ScriptRule, ScriptedBackend};
    use crate::retriever::HashEmbedder;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn synthetic(paragraphs: usize, words_per: usize) -> String {
        (0..paragraphs)
            .map(|p| {
                (0..words_per)
                    .map(|w| format!("w{p}x{w}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    #[test]
    fn ten_thousand_tokens_make_three_chunks() {
        let doc = SourceDocument::new("d", synthetic(100, 100)).unwrap();
        let chunks = chunk_document(&doc, 4000, &WordCounter).unwrap();
        let counts: Vec<usize> = chunks.iter().map(|c| c.token_count).collect();
        assert_eq!(counts, vec![4000, 4000, 2000]);
        assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>(), doc.text);
    }

    #[test]
    fn short_document_is_one_identical_chunk() {
        let text = synthetic(1, 50);
        let doc = SourceDocument::new("d", text.clone()).unwrap();
        let chunks = chunk_document(&doc, 4000, &ScaledWordCounter::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].token_count, 65);
    }

    #[test]
    fn oversized_paragraph_splits_at_sentences_then_words() {
        let text = "One two three. Four five six. Seven eight nine ten eleven twelve.";
        let doc = SourceDocument::new("d", text).unwrap();
        let chunks = chunk_document(&doc, 4, &WordCounter).unwrap();
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(
            texts,
            vec!["One two three. ", "Four five six. ", "Seven eight nine ten ", "eleven twelve."]
        );
    }

    #[test]
    fn impossible_budget_is_an_error() {
        let doc = SourceDocument::new("d", "word").unwrap();
        assert!(matches!(
            chunk_document(&doc, 1, &ScaledWordCounter::default()),
            Err(IngestError::BudgetTooSmall { tokens: 2, .. })
        ));
        assert!(matches!(chunk_document(&doc, 0, &WordCounter), Err(IngestError::ZeroBudget)));
        assert!(matches!(SourceDocument::new("d", "  "), Err(IngestError::EmptyDocument(_))));
    }

    fn gateway(backend: ScriptedBackend) -> Gateway {
        Gateway::new().with_backend(Arc::new(backend))
    }

    fn options() -> SummaryOptions {
        SummaryOptions {
            backend_id: "s".into(),
            ..Default::default()
        }
    }

    #[test]
    fn summary_links_to_its_source() {
        let gw = gateway(ScriptedBackend::new("s").on("alpha text", "SUMMARY:d#0"));
        let chunk = Chunk {
            doc_id: "d".into(),
            index: 0,
            text: "alpha text".into(),
            token_count: 2,
        };
        let s = summarize_chunk(&chunk, &gw, &TemplateSet::default(), &options()).unwrap();
        assert_eq!(s.text, "SUMMARY:d#0");
        assert_eq!(s.kind, ChunkKind::Summary);
        assert_eq!(s.source, chunk.chunk_ref());
    }

    #[test]
    fn blank_summary_retries_then_pends() {
        let backend = Arc::new(ScriptedBackend::with_default("s", "   "));
        let gw = Gateway::new().with_backend(backend.clone());
        let chunk = Chunk {
            doc_id: "d".into(),
            index: 3,
            text: "beta".into(),
            token_count: 1,
        };
        let err = summarize_chunk(&chunk, &gw, &TemplateSet::default(), &options()).unwrap_err();
        assert!(matches!(err, IngestError::SummaryPending { attempts: 3, .. }));
        assert_eq!(backend.call_count(), 3);
    }

    fn ingest_with(gw: &Gateway, corpus: &Corpus, docs: &[SourceDocument]) -> IngestReport {
        let embedder = HashEmbedder::new("h", 32, 5);
        let templates = TemplateSet::default();
        Ingestor {
            gateway: gw,
            embedder: &embedder,
            corpus,
            templates: &templates,
            counter: &WordCounter,
            options: IngestOptions {
                max_tokens: 50,
                summary: options(),
                ..Default::default()
            },
        }
        .ingest(docs)
    }

    #[test]
    fn ingest_indexes_originals_and_summaries() {
        let gw = gateway(ScriptedBackend::with_default("s", "a summary"));
        let corpus = Corpus::new(32).unwrap();
        let docs = vec![
            SourceDocument::new("a", synthetic(3, 30)).unwrap(),
            SourceDocument::new("b", synthetic(1, 10)).unwrap(),
        ];
        let report = ingest_with(&gw, &corpus, &docs);
        assert_eq!(report.documents[0].chunks, 3);
        assert_eq!(report.documents[1].chunks, 1);
        assert_eq!(report.total_chunks, 4);
        assert_eq!(report.total_summaries, 4);
        assert_eq!(report.total_index_entries, 8);
        assert_eq!(
            report.total_index_entries,
            report.documents.iter().map(|d| d.index_entries).sum::<usize>()
        );
        let snap = corpus.snapshot();
        assert_eq!(snap.index.len(), 8);
        for entry in snap.index.entries() {
            if entry.chunk.kind == ChunkKind::Summary {
                let source = ChunkRef::new(entry.chunk.doc_id.clone(), entry.chunk.index, ChunkKind::Original);
                assert!(snap.texts.contains_key(&source));
            }
        }
    }

    #[test]
    fn reingest_replaces_previous_entries() {
        let gw = gateway(ScriptedBackend::with_default("s", "a summary"));
        let corpus = Corpus::new(32).unwrap();
        ingest_with(&gw, &corpus, &[SourceDocument::new("a", synthetic(3, 30)).unwrap()]);
        let report = ingest_with(&gw, &corpus, &[SourceDocument::new("a", synthetic(1, 10)).unwrap()]);
        assert_eq!(report.documents[0].replaced_entries, 6);
        assert_eq!(corpus.snapshot().index.len(), 2);
    }

    #[test]
    fn gateway_down_indexes_originals_and_reports_pending() {
        let gw = gateway(ScriptedBackend::new("s").rule(ScriptRule::unreachable(Matcher::contains(""))));
        let corpus = Corpus::new(32).unwrap();
        let report = ingest_with(&gw, &corpus, &[SourceDocument::new("a", synthetic(3, 30)).unwrap()]);
        let doc = &report.documents[0];
        assert_eq!(doc.chunks, 3);
        assert_eq!(doc.summaries, 0);
        assert_eq!(doc.pending_summaries, vec![0, 1, 2]);
        assert_eq!(doc.index_entries, 3);
        assert_eq!(report.total_pending, 3);
        assert!(doc.error.is_none());
        assert!(corpus
            .snapshot()
            .index
            .entries()
            .iter()
            .all(|e| e.chunk.kind == ChunkKind::Original));
    }

    #[test]
    fn failing_document_is_reported_not_dropped() {
        let gw = gateway(ScriptedBackend::with_default("s", "ok"));
        let corpus = Corpus::new(32).unwrap();
        let bad = SourceDocument {
            id: "bad".into(),
            uri: None,
            text: " ".into(),
            metadata: BTreeMap::new(),
        };
        let report = ingest_with(&gw, &corpus, &[bad, SourceDocument::new("good", "fine text").unwrap()]);
        assert_eq!(report.failed_documents, 1);
        assert!(report.documents[0].error.is_some());
        assert_eq!(report.documents[1].index_entries, 2);
    }

    #[test]
    fn manifest_and_directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("nand.txt"), "NAND basics").unwrap();
        std::fs::write(dir.path().join("skip.bin"), "x").unwrap();
        let docs = load_documents(dir.path()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "nand");

        let manifest = dir.path().join("manifest.toml");
        std::fs::write(
            &manifest,
            "[[document]]\nid = \"n1\"\npath = \"nand.txt\"\n[document.metadata]\nteam = \"ACT\"\n\n[[document]]\nid = \"inline\"\ntext = \"Inline text\"\n",
        )
        .unwrap();
        let docs = load_documents(&manifest).unwrap();
        assert_eq!(docs[0].text, "NAND basics");
        assert_eq!(docs[0].metadata["team"], "ACT");
        assert_eq!(docs[1].text, "Inline text");

        std::fs::write(&manifest, "[[document]]\nid = \"x\"\n").unwrap();
        assert!(matches!(load_documents(&manifest), Err(IngestError::Manifest { .. })));
    }

    proptest! {
        #[test]
        fn chunks_are_lossless_and_within_budget(
            text in "[a-z]{1,8}([ \n]{1,3}[a-z]{1,8}[.!?]?){0,300}",
            max in 2usize..60,
        ) {
            let doc = SourceDocument::new("p", text.clone()).unwrap();
            for counter in [&WordCounter as &dyn TokenCounter, &ScaledWordCounter::default()] {
                let chunks = chunk_document(&doc, max, counter).unwrap();
                prop_assert_eq!(chunks.iter().map(|c| c.text.as_str()).collect::<String>(), text.clone());
                for (i, c) in chunks.iter().enumerate() {
                    prop_assert!(c.token_count <= max);
                    prop_assert_eq!(c.index as usize, i);
                }
            }
        }
    }
}
