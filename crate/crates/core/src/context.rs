//! Pre-registered contexts and LLM-driven context identification.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{parse_context_name, FewShotExample, Gateway, LlmError, LlmRequest};
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExample {
    pub question: String,
    #[serde(default)]
    pub reasoning: String,
    /// Expected answer; defaults to the owning profile's name.
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextProfile {
    pub name: String,
    pub description: String,
    #[serde(default, rename = "example")]
    pub few_shot_examples: Vec<ContextExample>,
}

impl ContextProfile {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            few_shot_examples: Vec::new(),
        }
    }

    pub fn with_example(
        mut self,
        question: impl Into<String>,
        reasoning: impl Into<String>,
    ) -> Self {
        self.few_shot_examples.push(ContextExample {
            question: question.into(),
            reasoning: reasoning.into(),
            name: None,
        });
        self
    }
}

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context registry is empty")]
    EmptyRegistry,
    #[error("duplicate context name `{0}`")]
    DuplicateName(String),
    #[error("context profile {index} is invalid: {reason}")]
    InvalidProfile { index: usize, reason: String },
    #[error("reading registry {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing registry: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("fallback context `{0}` is not registered")]
    UnknownFallback(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("context identification failed after {attempts} attempts; last reply: {last_response:?}")]
    Unresolved {
        attempts: u32,
        last_response: String,
        prompt: String,
    },
}

/// Validated, immutable list of contexts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextRegistry {
    profiles: Vec<ContextProfile>,
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default, rename = "context")]
    contexts: Vec<ContextProfile>,
}

pub(crate) fn valid_context_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl ContextRegistry {
    pub fn new(profiles: Vec<ContextProfile>) -> Result<Self, ContextError> {
        if profiles.is_empty() {
            return Err(ContextError::EmptyRegistry);
        }
        let mut seen = HashSet::new();
        for (index, p) in profiles.iter().enumerate() {
            if !valid_context_name(&p.name) {
                return Err(ContextError::InvalidProfile {
                    index,
                    reason: format!("name {:?} must be 1-64 characters of [A-Za-z0-9._-]", p.name),
                });
            }
            if p.description.trim().is_empty() {
                return Err(ContextError::InvalidProfile {
                    index,
                    reason: "description is empty".into(),
                });
            }
            if !seen.insert(p.name.to_ascii_lowercase()) {
                return Err(ContextError::DuplicateName(p.name.clone()));
            }
        }
        Ok(Self { profiles })
    }

    pub fn from_toml(source: &str) -> Result<Self, ContextError> {
        let file: RegistryFile = toml::from_str(source)?;
        Self::new(file.contexts)
    }

    pub fn from_file(path: &Path) -> Result<Self, ContextError> {
        let source = std::fs::read_to_string(path).map_err(|source| ContextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&source)
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            context: &'a [ContextProfile],
        }
        toml::to_string(&Out {
            context: &self.profiles,
        })
        .unwrap_or_default()
    }

    pub fn profiles(&self) -> &[ContextProfile] {
        &self.profiles
    }

    /// Case-insensitive lookup by name.
    pub fn get(&self, name: &str) -> Option<&ContextProfile> {
        let name = name.trim();
        self.profiles
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
    }

    fn listing(&self) -> String {
        self.profiles
            .iter()
            .map(|p| format!("- {}: {}", p.name, p.description))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn examples(&self) -> Vec<FewShotExample> {
        self.profiles
            .iter()
            .flat_map(|p| {
                p.few_shot_examples.iter().map(move |e| FewShotExample {
                    input: e.question.clone(),
                    reasoning: e.reasoning.clone(),
                    output: e.name.clone().unwrap_or_else(|| p.name.clone()),
                })
            })
            .collect()
    }
}

/// Registry slot whose contents can be swapped atomically while readers keep
/// the snapshot they already hold.
#[derive(Debug)]
pub struct RegistryHandle {
    current: RwLock<Arc<ContextRegistry>>,
}

impl RegistryHandle {
    pub fn new(registry: ContextRegistry) -> Self {
        Self {
            current: RwLock::new(Arc::new(registry)),
        }
    }

    pub fn snapshot(&self) -> Arc<ContextRegistry> {
        self.current
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn replace(&self, registry: ContextRegistry) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(registry);
    }
}

/// What to do when the model never names a registered context.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ContextFallback {
    #[default]
    Error,
    Profile(String),
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions<'a> {
    pub backend_id: &'a str,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub max_retries: u32,
    pub fallback: ContextFallback,
}

/// Result of one classification, with what was exchanged with the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub profile: ContextProfile,
    pub prompt: String,
    pub raw_response: String,
    pub attempts: u32,
    pub used_fallback: bool,
}

/// Renders the classification prompt for `question`.
pub fn context_prompt(
    question: &str,
    registry: &ContextRegistry,
    templates: &TemplateSet,
) -> Result<String, crate::gateway::TemplateError> {
    let listing = registry.listing();
    templates
        .context
        .clone()
        .with_examples(registry.examples())
        .render(&[("question", question), ("contexts", &listing)])
}

/// Asks the model which registered context `question` belongs to.
///
/// A reply that cannot be parsed or names an unregistered context triggers a
/// re-prompt, up to `max_retries` times, then the configured fallback. The
/// returned profile is always a member of `registry`.
pub fn classify_context(
    question: &str,
    registry: &ContextRegistry,
    gateway: &Gateway,
    templates: &TemplateSet,
    options: &ClassifyOptions<'_>,
) -> Result<Classification, ContextError> {
    let base = context_prompt(question, registry, templates).map_err(|e| {
        ContextError::InvalidProfile {
            index: 0,
            reason: e.to_string(),
        }
    })?;
    let fallback = match &options.fallback {
        ContextFallback::Error => None,
        ContextFallback::Profile(name) => Some(
            registry
                .get(name)
                .cloned()
                .ok_or_else(|| ContextError::UnknownFallback(name.clone()))?,
        ),
    };
    let mut prompt = base.clone();
    let mut last = String::new();
    for attempt in 1..=options.max_retries + 1 {
        let request = LlmRequest::new(options.backend_id, prompt.clone())
            .with_sampling(options.temperature, options.max_output_tokens);
        let text = gateway.complete(&request)?.text;
        let problem = match parse_context_name(&text) {
            Ok(name) => match registry.get(&name) {
                Some(profile) => {
                    return Ok(Classification {
                        profile: profile.clone(),
                        prompt,
                        raw_response: text,
                        attempts: attempt,
                        used_fallback: false,
                    })
                }
                None => format!("`{name}` is not one of the listed contexts"),
            },
            Err(e) => e.to_string(),
        };
        last = text;
        prompt = templates.retry_prompt(&base, &problem);
    }
    match fallback {
        Some(profile) => Ok(Classification {
            profile,
            prompt,
            raw_response: last,
            attempts: options.max_retries + 1,
            used_fallback: true,
        }),
        None => Err(ContextError::Unresolved {
            attempts: options.max_retries + 1,
            last_response: last,
            prompt,
        }),
    }
}
