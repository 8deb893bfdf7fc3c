use std::fmt;

use glossa_core::context::ContextError;
use glossa_core::gateway::LlmError;
use glossa_core::ingest::IngestError;
use glossa_core::jargon::JargonError;
use glossa_core::pipeline::PipelineError;
use glossa_core::suggestions::SuggestionError;
use glossa_core::EngineError;
use serde::{Deserialize, Serialize};

/// Every error code the service can return. Clients may match on these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    EmptyQuestion,
    InvalidRequest,
    Unauthorized,
    NotFound,
    MethodNotAllowed,
    PayloadTooLarge,
    ValidationFailed,
    ParseFailure,
    BackendUnreachable,
    StoreError,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 11] = [
        ErrorCode::EmptyQuestion,
        ErrorCode::InvalidRequest,
        ErrorCode::Unauthorized,
        ErrorCode::NotFound,
        ErrorCode::MethodNotAllowed,
        ErrorCode::PayloadTooLarge,
        ErrorCode::ValidationFailed,
        ErrorCode::ParseFailure,
        ErrorCode::BackendUnreachable,
        ErrorCode::StoreError,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::EmptyQuestion => "empty_question",
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::Unauthorized => "unauthorized",
            ErrorCode::NotFound => "not_found",
            ErrorCode::MethodNotAllowed => "method_not_allowed",
            ErrorCode::PayloadTooLarge => "payload_too_large",
            ErrorCode::ValidationFailed => "validation_failed",
            ErrorCode::ParseFailure => "parse_failure",
            ErrorCode::BackendUnreachable => "backend_unreachable",
            ErrorCode::StoreError => "store_error",
            ErrorCode::Internal => "internal",
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::EmptyQuestion | ErrorCode::InvalidRequest => 400,
            ErrorCode::Unauthorized => 401,
            ErrorCode::NotFound => 404,
            ErrorCode::MethodNotAllowed => 405,
            ErrorCode::PayloadTooLarge => 413,
            ErrorCode::ValidationFailed | ErrorCode::ParseFailure => 422,
            ErrorCode::BackendUnreachable => 503,
            ErrorCode::StoreError | ErrorCode::Internal => 500,
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub retryable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: false,
            trace_id: None,
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::InvalidRequest, message)
    }

    fn retryable(mut self, retryable: bool) -> Self {
        self.retryable = retryable;
        self
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(id) = &self.trace_id {
            write!(f, " (trace {id})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ApiError {}

fn llm_code(e: &LlmError) -> ErrorCode {
    match e {
        LlmError::UnknownBackend(_) | LlmError::InvalidRequest(_) | LlmError::NoScriptMatch { .. } => {
            ErrorCode::Internal
        }
        _ => ErrorCode::BackendUnreachable,
    }
}

fn jargon_code(e: &JargonError) -> ErrorCode {
    match e {
        JargonError::Store(_) | JargonError::Io(_) => ErrorCode::StoreError,
        _ => ErrorCode::ValidationFailed,
    }
}

fn context_code(e: &ContextError) -> ErrorCode {
    match e {
        ContextError::Io { .. } => ErrorCode::StoreError,
        ContextError::Backend(b) => llm_code(b),
        ContextError::Unresolved { .. } => ErrorCode::ParseFailure,
        _ => ErrorCode::ValidationFailed,
    }
}

fn pipeline_code(e: &PipelineError) -> ErrorCode {
    match e {
        PipelineError::EmptyQuestion => ErrorCode::EmptyQuestion,
        PipelineError::UnknownContext(_) => ErrorCode::InvalidRequest,
        PipelineError::Backend(b) => llm_code(b),
        PipelineError::Parse { .. } => ErrorCode::ParseFailure,
        PipelineError::Context(c) => context_code(c),
        PipelineError::Dictionary(d) => jargon_code(d),
        PipelineError::Embed(e) if e.is_retryable() => ErrorCode::BackendUnreachable,
        PipelineError::Index(_) => ErrorCode::StoreError,
        _ => ErrorCode::Internal,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::Pipeline { error, trace_id } => {
                let mut out = ApiError::new(pipeline_code(&error), message).retryable(error.is_retryable());
                out.trace_id = trace_id;
                out
            }
            EngineError::Context(c) => {
                let retryable = matches!(&c, ContextError::Backend(b) if b.is_retryable());
                ApiError::new(context_code(&c), message).retryable(retryable)
            }
            EngineError::Dictionary(d) => ApiError::new(jargon_code(&d), message),
            EngineError::Suggestion(SuggestionError::EmptyTerm) => ApiError::new(ErrorCode::ValidationFailed, message),
            EngineError::Index(_) | EngineError::Trace(_) | EngineError::Suggestion(_) | EngineError::Io(_) => {
                ApiError::new(ErrorCode::StoreError, message)
            }
            EngineError::Config(_) | EngineError::Templates(_) | EngineError::Script(_) => {
                ApiError::new(ErrorCode::Internal, message)
            }
        }
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let code = match e {
            IngestError::Io(_) | IngestError::Index(_) => ErrorCode::StoreError,
            IngestError::Manifest { .. } => ErrorCode::InvalidRequest,
            _ => ErrorCode::ValidationFailed,
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<JargonError> for ApiError {
    fn from(e: JargonError) -> Self {
        ApiError::new(jargon_code(&e), e.to_string())
    }
}

impl From<ContextError> for ApiError {
    fn from(e: ContextError) -> Self {
        EngineError::Context(e).into()
    }
}
