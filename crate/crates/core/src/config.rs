//! Service configuration: a TOML file plus `GLOSSA_`-prefixed environment
//! overrides, where `__` separates nested keys
//! (`GLOSSA_PIPELINE__TOP_K=3` sets `pipeline.top_k`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::Value;

use crate::ingest::{IngestOptions, ScaledWordCounter, SummaryOptions, TokenCounter, WordCounter};
use crate::pipeline::PipelineConfig;

pub const ENV_PREFIX: &str = "GLOSSA_";
/// Environment variable naming the config file; never treated as an override.
pub const CONFIG_PATH_ENV: &str = "GLOSSA_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("environment override {var}: {reason}")]
    Override { var: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StorageConfig {
    pub data_dir: PathBuf,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterKind {
    Words,
    #[default]
    ScaledWords,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub max_tokens: usize,
    pub counter: CounterKind,
    pub summarize: bool,
    /// Backend writing summaries; defaults to `pipeline.llm_backend`.
    pub summary_backend: Option<String>,
    pub max_retries: u32,
    pub parallelism: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            max_tokens: 4000,
            counter: CounterKind::ScaledWords,
            summarize: true,
            summary_backend: None,
            max_retries: 2,
            parallelism: 4,
        }
    }
}

impl IngestConfig {
    pub fn counter(&self) -> Box<dyn TokenCounter> {
        match self.counter {
            CounterKind::Words => Box::new(WordCounter),
            CounterKind::ScaledWords => Box::new(ScaledWordCounter::default()),
        }
    }

    pub fn options(&self, pipeline: &PipelineConfig) -> IngestOptions {
        IngestOptions {
            max_tokens: self.max_tokens,
            summarize: self.summarize,
            summary: SummaryOptions {
                backend_id: self
                    .summary_backend
                    .clone()
                    .unwrap_or_else(|| pipeline.llm_backend.clone()),
                temperature: pipeline.temperature,
                max_output_tokens: pipeline.max_output_tokens.max(1024),
                max_retries: self.max_retries,
            },
            parallelism: self.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// When set, every request except the health check needs
    /// `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            auth_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    Openai {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_llm_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        system_prompt: Option<String>,
    },
    /// Replies from a rule file; see the scripted backend.
    Scripted { script: PathBuf },
}

fn default_llm_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default = "default_hash_dims")]
        dims: usize,
        #[serde(default)]
        seed: u64,
    },
    Openai {
        endpoint: String,
        model: String,
        dims: usize,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_embed_timeout")]
        timeout_secs: u64,
    },
}

fn default_hash_dims() -> usize {
    256
}

fn default_embed_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Replacement prompt and response templates.
    pub templates: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub storage: StorageConfig,
    pub ingest: IngestConfig,
    pub server: ServerConfig,
    pub llm: BTreeMap<String, LlmConfig>,
    pub embedding: BTreeMap<String, EmbeddingConfig>,
    /// Context registry files by id.
    pub contexts: BTreeMap<String, PathConfig>,
    /// Dictionary database files by id; default `<data_dir>/dictionary-<id>.sqlite`.
    pub dictionaries: BTreeMap<String, PathConfig>,
}

fn parse_override_value(raw: &str) -> Value {
    toml::from_str::<BTreeMap<String, Value>>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut m| m.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Writes each `GLOSSA_A__B=value` pair into `root` at `a.b`. Values that
/// parse as TOML scalars or arrays keep that type; anything else is a string.
pub fn apply_env_overrides<I>(root: &mut Value, vars: I) -> Result<(), ConfigError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != CONFIG_PATH_ENV)
        .collect();
    vars.sort();
    for (var, raw) in vars {
        let path: Vec<String> = var[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(ConfigError::Override {
                var,
                reason: "empty key segment".into(),
            });
        }
        let mut node = &mut *root;
        for (i, key) in path.iter().enumerate() {
            let table = match node {
                Value::Table(t) => t,
                _ => {
                    return Err(ConfigError::Override {
                        var: var.clone(),
                        reason: format!("`{}` is not a table", path[..i].join(".")),
                    })
                }
            };
            if i + 1 == path.len() {
                table.insert(key.clone(), parse_override_value(&raw));
                break;
            }
            node = table
                .entry(key.clone())
                .or_insert_with(|| Value::Table(Default::default()));
        }
    }
    Ok(())
}

impl Config {
    pub fn from_toml_with_env<I>(source: &str, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut root: Value = toml::from_str(source)?;
        apply_env_overrides(&mut root, vars)?;
        let config: Config = root.try_into()?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` (or an empty config when `None`) with overrides from the
    /// process environment. Relative paths inside the file resolve against
    /// the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let source = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        let mut config = Self::from_toml_with_env(&source, std::env::vars())?;
        if let Some(base) = path.and_then(Path::parent) {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = self.templates.as_mut() {
            fix(t);
        }
        fix(&mut self.storage.data_dir);
        for llm in self.llm.values_mut() {
            if let LlmConfig::Scripted { script } = llm {
                fix(script);
            }
        }
        for c in self.contexts.values_mut().chain(self.dictionaries.values_mut()) {
            fix(&mut c.path);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.ingest.max_tokens == 0 {
            return Err(ConfigError::Invalid("ingest.max_tokens must be at least 1".into()));
        }
        for (id, e) in &self.embedding {
            let dims = match e {
                EmbeddingConfig::Hash { dims, .. } | EmbeddingConfig::Openai { dims, .. } => *dims,
            };
            if dims == 0 {
                return Err(ConfigError::Invalid(format!("embedding.{id}.dims must be at least 1")));
            }
        }
        Ok(())
    }
}
