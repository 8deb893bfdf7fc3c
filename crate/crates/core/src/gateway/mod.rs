//! Uniform access to language-model backends.
//!
//! A [`Gateway`] owns a set of named [`LlmBackend`]s. Pipeline steps build an
//! [`LlmRequest`] from a rendered [`PromptTemplate`] and parse the reply with
//! the helpers in [`parse`].

mod openai;
pub mod parse;
mod scripted;
mod template;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use openai::{OpenAiChatBackend, OpenAiChatConfig};
pub use parse::{inspect_term_list, parse_context_name, parse_term_list, serialize_term_list, TermListParse};
pub use scripted::{Matcher, ScriptError, ScriptRule, ScriptedBackend};
pub use template::{FewShotExample, PromptTemplate, TemplateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("unknown llm backend `{0}`")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unreachable at {endpoint}: {detail}")]
    Unreachable { endpoint: String, detail: String },
    #[error("backend at {endpoint} returned status {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("request to {endpoint} timed out after {timeout:?}")]
    Timeout { endpoint: String, timeout: Duration },
    #[error("backend `{0}` returned an empty response")]
    EmptyResponse(String),
    #[error("malformed response from {endpoint}: {detail}")]
    Malformed { endpoint: String, detail: String },
    #[error("scripted backend `{backend}` has no rule matching the prompt")]
    NoScriptMatch { backend: String },
}

impl LlmError {
    /// Transient failures that a caller may retry later.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Unreachable { .. } | LlmError::Timeout { .. } | LlmError::EmptyResponse(_)
        ) || matches!(self, LlmError::Status { status, .. } if *status >= 500 || *status == 429)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub backend_id: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl LlmRequest {
    /// Request with the pipeline defaults: temperature 0, 512 output tokens.
    pub fn new(backend_id: impl Into<String>, prompt_text: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            prompt_text: prompt_text.into(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, max_output_tokens: u32) -> Self {
        self.temperature = temperature;
        self.max_output_tokens = max_output_tokens;
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.prompt_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt text is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub latency: Duration,
    pub backend_id: String,
}

/// Sampling parameters handed to a backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Returns the raw completion text for `prompt`.
    fn complete(&self, prompt: &str, sampling: Sampling) -> Result<String, LlmError>;
}

/// Registry of backends addressed by id.
#[derive(Clone, Default)]
pub struct Gateway {
    backends: BTreeMap<String, Arc<dyn LlmBackend>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, backend: Arc<dyn LlmBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn with_backend(mut self, backend: Arc<dyn LlmBackend>) -> Self {
        self.register(backend);
        self
    }

    pub fn contains(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn backend(&self, id: &str) -> Option<&Arc<dyn LlmBackend>> {
        self.backends.get(id)
    }

    pub fn backend_ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let backend = self
            .backends
            .get(&request.backend_id)
            .ok_or_else(|| LlmError::UnknownBackend(request.backend_id.clone()))?;
        let started = Instant::now();
        let text = backend.complete(
            &request.prompt_text,
            Sampling {
                temperature: request.temperature,
                max_output_tokens: request.max_output_tokens,
            },
        )?;
        if text.is_empty() {
            return Err(LlmError::EmptyResponse(request.backend_id.clone()));
        }
        Ok(LlmResponse {
            text,
            latency: started.elapsed(),
            backend_id: request.backend_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_prompt_and_unknown_backend() {
        let gw = Gateway::new().with_backend(Arc::new(ScriptedBackend::with_default("s", "[]")));
        let err = gw.complete(&LlmRequest::new("s", "   ")).unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
        let err = gw.complete(&LlmRequest::new("nope", "hi")).unwrap_err();
        assert_eq!(err, LlmError::UnknownBackend("nope".into()));
        let err = gw
            .complete(&LlmRequest::new("s", "hi").with_sampling(-1.0, 10))
            .unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
    }

    #[test]
    fn empty_backend_text_is_an_error() {
        let gw = Gateway::new().with_backend(Arc::new(ScriptedBackend::with_default("s", "")));
        let err = gw.complete(&LlmRequest::new("s", "hi")).unwrap_err();
        assert_eq!(err, LlmError::EmptyResponse("s".into()));
        assert!(err.is_retryable());
    }
}
