pub mod config;
pub mod context;
pub mod engine;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod jargon;
pub mod pipeline;
pub mod retriever;
pub mod suggestions;
pub mod templates;
pub mod text;

pub use config::Config;
pub use context::{ContextProfile, ContextRegistry};
pub use engine::{AskOptions, Engine, EngineError};
pub use gateway::{Gateway, LlmBackend, LlmError};
pub use ingest::{Chunk, IngestReport, SourceDocument};
pub use jargon::{JargonEntry, JargonStore, LookupResult};
pub use pipeline::{
    AnswerKind, AnswerResult, AugmentedQuestion, PipelineConfig, PipelineError, PipelineRun, PipelineTrace, StepName,
    StepRecord, UserQuestion,
};
pub use retriever::{Embedder, RetrievedChunk};
pub use suggestions::{MissReport, MissTicket};
pub use templates::TemplateSet;
