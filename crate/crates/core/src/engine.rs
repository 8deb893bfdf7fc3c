//! Everything a running service holds, wired from a [`Config`]. The command
//! line and the HTTP server both drive this type.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::config::{Config, EmbeddingConfig, LlmConfig};
use crate::context::{ContextError, ContextProfile, ContextRegistry, RegistryHandle};
use crate::gateway::{Gateway, LlmBackend, OpenAiChatBackend, OpenAiChatConfig, ScriptError, ScriptedBackend};
use crate::ingest::{IngestReport, Ingestor, SourceDocument};
use crate::jargon::{JargonError, JargonStore};
use crate::pipeline::{
    run_pipeline, run_plain_rag, PipelineError, PipelineResources, PipelineRun, PipelineTrace, RunOptions,
    TraceError, TraceStore, UserQuestion,
};
use crate::retriever::{Corpus, Embedder, HashEmbedder, IndexError, OpenAiEmbedder, OpenAiEmbedderConfig};
use crate::suggestions::{MissReport, MissTicket, SuggestionError, SuggestionQueue};
use crate::templates::{TemplateSet, TemplateSetError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Templates(#[from] TemplateSetError),
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Dictionary(#[from] JargonError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Suggestion(#[from] SuggestionError),
    /// The run failed; its partial trace is stored under `trace_id`.
    #[error("{error}")]
    Pipeline { error: PipelineError, trace_id: Option<String> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<PipelineError> for EngineError {
    fn from(error: PipelineError) -> Self {
        Self::Pipeline { error, trace_id: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AskOptions {
    pub context_override: Option<String>,
    pub session_id: Option<String>,
}

pub struct Engine {
    config: Config,
    gateway: Gateway,
    embedder: Arc<dyn Embedder>,
    registry: RegistryHandle,
    dictionary: JargonStore,
    corpus: Corpus,
    templates: TemplateSet,
    traces: TraceStore,
    suggestions: SuggestionQueue,
    ingest_lock: Mutex<()>,
}

fn build_backend(id: &str, cfg: &LlmConfig) -> Result<Arc<dyn LlmBackend>, EngineError> {
    Ok(match cfg {
        LlmConfig::Openai {
            endpoint,
            model,
            api_key_env,
            timeout_secs,
            system_prompt,
        } => Arc::new(OpenAiChatBackend::new(OpenAiChatConfig {
            id: id.to_string(),
            endpoint: endpoint.clone(),
            model: model.clone(),
            api_key_env: api_key_env.clone(),
            timeout_secs: *timeout_secs,
            system_prompt: system_prompt.clone(),
        })),
        LlmConfig::Scripted { script } => Arc::new(ScriptedBackend::from_file(id, script)?),
    })
}

fn build_embedder(id: &str, cfg: &EmbeddingConfig) -> Arc<dyn Embedder> {
    match cfg {
        EmbeddingConfig::Hash { dims, seed } => Arc::new(HashEmbedder::new(id, *dims, *seed)),
        EmbeddingConfig::Openai {
            endpoint,
            model,
            dims,
            api_key_env,
            timeout_secs,
        } => Arc::new(OpenAiEmbedder::new(OpenAiEmbedderConfig {
            id: id.to_string(),
            endpoint: endpoint.clone(),
            model: model.clone(),
            dims: *dims,
            api_key_env: api_key_env.clone(),
            timeout_secs: *timeout_secs,
        })),
    }
}

fn default_registry() -> ContextRegistry {
    ContextRegistry::new(vec![ContextProfile::new("general", "Any topic")]).expect("valid built-in registry")
}

impl Engine {
    /// Opens every store under `storage.data_dir`, creating what is missing.
    pub fn open(config: Config) -> Result<Self, EngineError> {
        Self::open_with_backends(config, Vec::new())
    }

    /// Like [`Engine::open`], with extra backends registered after the
    /// configured ones (replacing any with the same id).
    pub fn open_with_backends(config: Config, extra: Vec<Arc<dyn LlmBackend>>) -> Result<Self, EngineError> {
        config.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        let data_dir = config.storage.data_dir.clone();
        std::fs::create_dir_all(&data_dir)?;

        let templates = match &config.templates {
            Some(p) => TemplateSet::from_file(p)?,
            None => TemplateSet::default(),
        };

        let mut gateway = Gateway::new();
        for (id, cfg) in &config.llm {
            gateway.register(build_backend(id, cfg)?);
        }
        for b in extra {
            gateway.register(b);
        }

        let embed_id = &config.pipeline.embedding_backend;
        let embedder = match config.embedding.get(embed_id) {
            Some(cfg) => build_embedder(embed_id, cfg),
            None if config.embedding.is_empty() => Arc::new(HashEmbedder::new(embed_id.clone(), 256, 0)),
            None => return Err(EngineError::Config(format!("embedding backend `{embed_id}` is not configured"))),
        };

        let registry_id = &config.pipeline.context_registry;
        let saved = Self::saved_registry_path(&data_dir, registry_id);
        let registry = if saved.exists() {
            ContextRegistry::from_file(&saved)?
        } else if let Some(c) = config.contexts.get(registry_id) {
            ContextRegistry::from_file(&c.path)?
        } else if config.contexts.is_empty() {
            default_registry()
        } else {
            return Err(EngineError::Config(format!("context registry `{registry_id}` is not configured")));
        };
        if let Some(fallback) = &config.pipeline.fallback_context {
            if registry.get(fallback).is_none() {
                return Err(EngineError::Config(format!("fallback context `{fallback}` is not registered")));
            }
        }

        let dict_id = &config.pipeline.dictionary;
        let dict_path = config
            .dictionaries
            .get(dict_id)
            .map(|d| d.path.clone())
            .unwrap_or_else(|| data_dir.join(format!("dictionary-{dict_id}.sqlite")));
        let dictionary = JargonStore::open(&dict_path)?;

        let corpus = Corpus::load_or_new(&Self::corpus_dir(&data_dir, embed_id), embedder.dims())?;

        Ok(Self {
            traces: TraceStore::open(&data_dir.join("traces.jsonl"))?,
            suggestions: SuggestionQueue::open(&data_dir.join("miss_reports.jsonl"))?,
            registry: RegistryHandle::new(registry),
            config,
            gateway,
            embedder,
            dictionary,
            corpus,
            templates,
            ingest_lock: Mutex::new(()),
        })
    }

    fn saved_registry_path(data_dir: &Path, id: &str) -> PathBuf {
        data_dir.join(format!("contexts-{id}.toml"))
    }

    fn corpus_dir(data_dir: &Path, embed_id: &str) -> PathBuf {
        data_dir.join(format!("index-{embed_id}"))
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn dictionary(&self) -> &JargonStore {
        &self.dictionary
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn contexts(&self) -> Arc<ContextRegistry> {
        self.registry.snapshot()
    }

    /// Swaps the registry and saves it, so it survives restarts. Runs in
    /// flight keep the registry they started with.
    pub fn replace_contexts(&self, registry: ContextRegistry) -> Result<(), EngineError> {
        if let Some(fallback) = &self.config.pipeline.fallback_context {
            if registry.get(fallback).is_none() {
                return Err(EngineError::Config(format!(
                    "the new registry lacks the fallback context `{fallback}`"
                )));
            }
        }
        let path = Self::saved_registry_path(&self.config.storage.data_dir, &self.config.pipeline.context_registry);
        let tmp = path.with_extension("toml.tmp");
        std::fs::write(&tmp, registry.to_toml())?;
        std::fs::rename(&tmp, &path)?;
        self.registry.replace(registry);
        Ok(())
    }

    /// Calls `f` with resources pinned to the current registry and corpus.
    pub fn with_resources<T>(&self, f: impl FnOnce(PipelineResources<'_>) -> T) -> T {
        let registry = self.registry.snapshot();
        let corpus = self.corpus.snapshot();
        f(PipelineResources {
            gateway: &self.gateway,
            embedder: self.embedder.as_ref(),
            registry: &registry,
            dictionary: &self.dictionary,
            corpus: &corpus,
            templates: &self.templates,
        })
    }

    fn record(&self, outcome: Result<PipelineRun, crate::pipeline::PipelineFailure>) -> Result<PipelineRun, EngineError> {
        match outcome {
            Ok(run) => {
                self.traces.append(run.trace.clone())?;
                Ok(run)
            }
            Err(failure) => {
                let trace_id = failure.trace.question_id.clone();
                let stored = !failure.trace.steps.is_empty() && self.traces.append(failure.trace).is_ok();
                Err(EngineError::Pipeline {
                    error: failure.error,
                    trace_id: stored.then_some(trace_id),
                })
            }
        }
    }

    fn question(text: &str, options: &AskOptions) -> Result<UserQuestion, EngineError> {
        let mut q = UserQuestion::new(text)?;
        q.session_id = options.session_id.clone();
        Ok(q)
    }

    /// Runs the full pipeline and stores its trace.
    pub fn ask(&self, text: &str, options: &AskOptions) -> Result<PipelineRun, EngineError> {
        let question = Self::question(text, options)?;
        let run_options = RunOptions {
            context_override: options.context_override.clone(),
        };
        let outcome =
            self.with_resources(|res| run_pipeline(&question, &self.config.pipeline, res, &run_options));
        self.record(outcome)
    }

    /// Retrieval and generation on the unmodified question; trace stored.
    pub fn ask_plain(&self, text: &str, options: &AskOptions) -> Result<PipelineRun, EngineError> {
        let question = Self::question(text, options)?;
        let outcome = self.with_resources(|res| run_plain_rag(&question, &self.config.pipeline, res));
        self.record(outcome)
    }

    pub fn trace(&self, id: &str) -> Option<PipelineTrace> {
        self.traces.get(id)
    }

    /// Chunks, summarizes and indexes `docs`, then saves the index.
    pub fn ingest(&self, docs: &[SourceDocument]) -> Result<IngestReport, EngineError> {
        let _guard = self.ingest_lock.lock().unwrap_or_else(|e| e.into_inner());
        let counter = self.config.ingest.counter();
        let report = Ingestor {
            gateway: &self.gateway,
            embedder: self.embedder.as_ref(),
            corpus: &self.corpus,
            templates: &self.templates,
            counter: counter.as_ref(),
            options: self.config.ingest.options(&self.config.pipeline),
        }
        .ingest(docs);
        self.corpus.save(&Self::corpus_dir(
            &self.config.storage.data_dir,
            &self.config.pipeline.embedding_backend,
        ))?;
        Ok(report)
    }

    pub fn report_miss(&self, report: MissReport) -> Result<MissTicket, EngineError> {
        Ok(self.suggestions.submit(report)?)
    }

    pub fn miss_reports(&self) -> Vec<MissTicket> {
        self.suggestions.list()
    }

    pub fn backend_ids(&self) -> BTreeMap<&'static str, Vec<String>> {
        let mut m = BTreeMap::new();
        m.insert("llm", self.gateway.backend_ids().map(str::to_string).collect());
        m.insert("embedding", vec![self.embedder.id().to_string()]);
        m
    }
}
