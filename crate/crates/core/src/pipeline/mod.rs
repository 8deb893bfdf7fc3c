//! Online question answering: jargon identification, context
//! identification, dictionary lookup, question augmentation, retrieval and
//! answer generation, each recorded in a trace.

mod augment;
mod run;
mod trace;

use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextError;
use crate::gateway::{LlmError, TemplateError};
use crate::jargon::JargonError;
use crate::retriever::{EmbedError, IndexError, RetrievedChunk};

pub use augment::{augment_question, decide_jargon_branch, synthesize_miss_response, GlossaryItem, JargonBranch};
pub use run::{run_pipeline, run_plain_rag, PipelineResources, PipelineRun, RunOptions};
pub use trace::{PipelineTrace, StepName, StepRecord, TraceError, TraceStore};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no unresolved terms to report")]
    NoUnresolvedTerms,
    #[error("context `{0}` is not registered")]
    UnknownContext(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("{step}: reply unusable after {attempts} attempts: {problem}")]
    Parse {
        step: StepName,
        attempts: u32,
        problem: String,
        last_response: String,
    },
    #[error(transparent)]
    Context(ContextError),
    #[error(transparent)]
    Dictionary(#[from] JargonError),
    #[error("embedding: {0}")]
    Embed(#[from] EmbedError),
    #[error("retrieval: {0}")]
    Index(#[from] IndexError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl PipelineError {
    /// True when repeating the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Backend(e) => e.is_retryable(),
            Self::Context(ContextError::Backend(e)) => e.is_retryable(),
            Self::Embed(e) => e.is_retryable(),
            _ => false,
        }
    }
}

impl From<ContextError> for PipelineError {
    fn from(e: ContextError) -> Self {
        match e {
            ContextError::Backend(inner) => Self::Backend(inner),
            ContextError::Unresolved {
                attempts,
                last_response,
                ..
            } => Self::Parse {
                step: StepName::IdentifyContext,
                attempts,
                problem: "no registered context named".into(),
                last_response,
            },
            other => Self::Context(other),
        }
    }
}

/// A failed run keeps the trace of every step up to and including the one
/// that failed.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub error: PipelineError,
    pub trace: PipelineTrace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuestion {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub session_id: Option<String>,
    pub received_at: DateTime<Utc>,
}

static QUESTION_SEQ: AtomicU64 = AtomicU64::new(0);

impl UserQuestion {
    /// A question with a fresh process-unique id.
    pub fn new(text: impl Into<String>) -> Result<Self, PipelineError> {
        let now = Utc::now();
        let seq = QUESTION_SEQ.fetch_add(1, Ordering::Relaxed);
        let id = format!("q-{:x}-{seq:04x}", now.timestamp_micros());
        Self::with_id(id, text)
    }

    pub fn with_id(id: impl Into<String>, text: impl Into<String>) -> Result<Self, PipelineError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyQuestion);
        }
        Ok(Self {
            id: id.into(),
            text,
            session_id: None,
            received_at: Utc::now(),
        })
    }

    pub fn in_session(mut self, session_id: impl Into<String>) -> Self {
        self.session_id = Some(session_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedQuestion {
    pub question_id: String,
    pub original_text: String,
    pub context_name: String,
    pub glossary: Vec<GlossaryItem>,
    /// Terms kept in the text without a definition (partial miss policy).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<String>,
    pub rendered_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Answer,
    Miss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_text: Option<String>,
    #[serde(default)]
    pub retrieved: Vec<RetrievedChunk>,
    #[serde(default)]
    pub unresolved_terms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miss_message: Option<String>,
    /// Terms reported by jargon identification.
    #[serde(default)]
    pub jargon: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_name: Option<String>,
    #[serde(default)]
    pub glossary: Vec<GlossaryItem>,
    /// Text sent to retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_query: Option<String>,
    pub trace_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    /// Any unresolved term ends the run with a miss response.
    #[default]
    Strict,
    /// Augment with the resolved terms and mark the rest as unresolved.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoJargonPath {
    /// Send the original question straight to retrieval.
    #[default]
    Passthrough,
    /// Identify the context and augment with it alone.
    ContextOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub miss_policy: MissPolicy,
    pub top_k: usize,
    pub no_jargon_path: NoJargonPath,
    pub llm_backend: String,
    pub embedding_backend: String,
    pub context_registry: String,
    pub dictionary: String,
    /// Context used when classification never names a registered one.
    pub fallback_context: Option<String>,
    /// Re-prompts allowed per step after an unusable reply.
    pub max_parse_retries: u32,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            miss_policy: MissPolicy::Strict,
            top_k: 5,
            no_jargon_path: NoJargonPath::Passthrough,
            llm_backend: "default".into(),
            embedding_backend: "default".into(),
            context_registry: "default".into(),
            dictionary: "default".into(),
            fallback_context: None,
            max_parse_retries: 2,
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.top_k == 0 {
            return Err(PipelineError::Config("top_k must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(PipelineError::Config("temperature must be non-negative".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(PipelineError::Config("max_output_tokens must be at least 1".into()));
        }
        Ok(())
    }
}
