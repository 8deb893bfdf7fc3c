//! Request and response bodies plus the operations behind them. The HTTP
//! handlers and the command line both call these, so the two surfaces
//! return the same results for the same input.

use std::collections::BTreeMap;

use glossa_core::ingest::{IngestReport, SourceDocument};
use glossa_core::pipeline::PipelineTrace;
use glossa_core::text::normalize_term;
use glossa_core::{
    AnswerResult, AskOptions, ContextProfile, ContextRegistry, Engine, JargonEntry, MissReport, MissTicket,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ErrorCode};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AskRequest {
    pub question: String,
    /// Skip context identification and use this context.
    pub context: Option<String>,
    pub session_id: Option<String>,
    /// Include the full step trace in the response.
    pub include_trace: bool,
    /// Answer with retrieval on the unmodified question.
    pub plain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    #[serde(flatten)]
    pub result: AnswerResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PipelineTrace>,
}

pub fn ask(engine: &Engine, request: &AskRequest) -> Result<AskResponse, ApiError> {
    if request.question.trim().is_empty() {
        return Err(ApiError::new(ErrorCode::EmptyQuestion, "question is empty"));
    }
    let options = AskOptions {
        context_override: request.context.clone().filter(|c| !c.trim().is_empty()),
        session_id: request.session_id.clone(),
    };
    let run = if request.plain {
        engine.ask_plain(&request.question, &options)?
    } else {
        engine.ask(&request.question, &options)?
    };
    Ok(AskResponse {
        result: run.result,
        trace: request.include_trace.then_some(run.trace),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub documents: Vec<SourceDocument>,
}

pub fn ingest(engine: &Engine, documents: &[SourceDocument]) -> Result<IngestReport, ApiError> {
    if documents.is_empty() {
        return Err(ApiError::invalid("no documents to ingest"));
    }
    Ok(engine.ingest(documents)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DictionaryFilter {
    pub term: Option<String>,
    pub context: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DictionaryListing {
    pub entries: Vec<JargonEntry>,
}

pub fn list_dictionary(engine: &Engine, filter: &DictionaryFilter) -> Result<DictionaryListing, ApiError> {
    let term = filter.term.as_deref().map(normalize_term);
    let entries = engine
        .dictionary()
        .entries()?
        .into_iter()
        .filter(|e| term.as_ref().is_none_or(|t| normalize_term(&e.term) == *t))
        .filter(|e| filter.context.as_ref().is_none_or(|c| e.context_name == *c))
        .collect();
    Ok(DictionaryListing { entries })
}

/// One entry or a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DictionaryUpsert {
    Batch { entries: Vec<JargonEntry> },
    One(JargonEntry),
}

impl DictionaryUpsert {
    pub fn into_entries(self) -> Vec<JargonEntry> {
        match self {
            DictionaryUpsert::Batch { entries } => entries,
            DictionaryUpsert::One(e) => vec![e],
        }
    }
}

pub fn upsert_dictionary(engine: &Engine, entries: Vec<JargonEntry>) -> Result<DictionaryListing, ApiError> {
    if entries.is_empty() {
        return Err(ApiError::invalid("no entries given"));
    }
    let stored = entries
        .into_iter()
        .map(|e| engine.dictionary().upsert_entry(e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DictionaryListing { entries: stored })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryKey {
    pub term: String,
    pub context: String,
}

pub fn delete_dictionary(engine: &Engine, key: &DictionaryKey) -> Result<(), ApiError> {
    if engine.dictionary().delete_entry(&key.term, &key.context)? {
        Ok(())
    } else {
        Err(ApiError::not_found(format!(
            "no dictionary entry for {:?} in context {:?}",
            key.term, key.context
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextListing {
    pub contexts: Vec<ContextProfile>,
}

pub fn contexts(engine: &Engine) -> ContextListing {
    ContextListing {
        contexts: engine.contexts().profiles().to_vec(),
    }
}

pub fn replace_contexts(engine: &Engine, listing: ContextListing) -> Result<ContextListing, ApiError> {
    let registry = ContextRegistry::new(listing.contexts)?;
    engine.replace_contexts(registry)?;
    Ok(contexts(engine))
}

pub fn trace(engine: &Engine, id: &str) -> Result<PipelineTrace, ApiError> {
    engine
        .trace(id)
        .ok_or_else(|| ApiError::not_found(format!("no trace with id {id:?}")))
}

pub fn report_miss(engine: &Engine, report: MissReport) -> Result<MissTicket, ApiError> {
    Ok(engine.report_miss(report)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissListing {
    pub tickets: Vec<MissTicket>,
}

pub fn miss_reports(engine: &Engine) -> MissListing {
    MissListing {
        tickets: engine.miss_reports(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backends: BTreeMap<String, Vec<String>>,
    pub index_entries: usize,
    pub dictionary_entries: usize,
    pub contexts: usize,
}

pub fn health(engine: &Engine) -> Result<Health, ApiError> {
    Ok(Health {
        status: "ok".into(),
        backends: engine
            .backend_ids()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        index_entries: engine.corpus().snapshot().index.len(),
        dictionary_entries: engine.dictionary().len()?,
        contexts: engine.contexts().profiles().len(),
    })
}
