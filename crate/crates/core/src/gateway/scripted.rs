//! Offline backend driven by an ordered table of prompt matchers.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::Deserialize;

use super::{LlmBackend, LlmError, Sampling};

#[derive(Debug, Clone)]
pub enum Matcher {
    Regex(Regex),
    Contains(String),
}

impl Matcher {
    pub fn regex(pattern: &str) -> Result<Self, regex::Error> {
        Ok(Matcher::Regex(Regex::new(pattern)?))
    }

    pub fn contains(needle: impl Into<String>) -> Self {
        Matcher::Contains(needle.into())
    }

    fn is_match(&self, prompt: &str) -> bool {
        match self {
            Matcher::Regex(re) => re.is_match(prompt),
            Matcher::Contains(needle) => prompt.contains(needle.as_str()),
        }
    }
}

#[derive(Debug, Clone)]
enum Reply {
    Fixed(String),
    /// The n-th match returns the n-th entry; the last entry repeats.
    Sequence(Vec<String>),
    Unreachable,
}

#[derive(Debug)]
pub struct ScriptRule {
    matcher: Matcher,
    reply: Reply,
    hits: AtomicUsize,
}

impl ScriptRule {
    pub fn new(matcher: Matcher, response: impl Into<String>) -> Self {
        Self::with_reply(matcher, Reply::Fixed(response.into()))
    }

    pub fn sequence(matcher: Matcher, responses: Vec<String>) -> Self {
        Self::with_reply(matcher, Reply::Sequence(responses))
    }

    /// A rule that simulates a backend that cannot be reached.
    pub fn unreachable(matcher: Matcher) -> Self {
        Self::with_reply(matcher, Reply::Unreachable)
    }

    fn with_reply(matcher: Matcher, reply: Reply) -> Self {
        Self {
            matcher,
            reply,
            hits: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    default: Option<String>,
    #[serde(default, rename = "rule")]
    rules: Vec<RuleRecord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleRecord {
    pattern: Option<String>,
    contains: Option<String>,
    response: Option<String>,
    responses: Option<Vec<String>>,
    #[serde(default)]
    unreachable: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing script: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("rule {index}: {reason}")]
    Rule { index: usize, reason: String },
}

/// Deterministic stand-in for a model: the first rule whose matcher accepts
/// the prompt supplies the reply, otherwise the declared default.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    rules: Vec<ScriptRule>,
    default: Option<String>,
    log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rules: Vec::new(),
            default: None,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_default(id: impl Into<String>, default: impl Into<String>) -> Self {
        let mut b = Self::new(id);
        b.default = Some(default.into());
        b
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Shorthand for a fixed reply to prompts containing `needle`.
    pub fn on(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rule(ScriptRule::new(Matcher::contains(needle), response))
    }

    pub fn default_response(mut self, default: impl Into<String>) -> Self {
        self.default = Some(default.into());
        self
    }

    pub fn from_toml(id: impl Into<String>, source: &str) -> Result<Self, ScriptError> {
        let file: ScriptFile = toml::from_str(source)?;
        let mut backend = Self::new(id);
        backend.default = file.default;
        for (index, rec) in file.rules.into_iter().enumerate() {
            let bad = |reason: &str| ScriptError::Rule {
                index,
                reason: reason.to_string(),
            };
            let matcher = match (rec.pattern, rec.contains) {
                (Some(p), None) => Matcher::regex(&p).map_err(|e| bad(&e.to_string()))?,
                (None, Some(c)) => Matcher::contains(c),
                _ => return Err(bad("exactly one of `pattern` or `contains` is required")),
            };
            let reply = match (rec.response, rec.responses, rec.unreachable) {
                (Some(r), None, false) => Reply::Fixed(r),
                (None, Some(rs), false) if !rs.is_empty() => Reply::Sequence(rs),
                (None, None, true) => Reply::Unreachable,
                _ => {
                    return Err(bad(
                        "exactly one of `response`, non-empty `responses` or `unreachable = true` is required",
                    ))
                }
            };
            backend.rules.push(ScriptRule::with_reply(matcher, reply));
        }
        Ok(backend)
    }

    pub fn from_file(id: impl Into<String>, path: &Path) -> Result<Self, ScriptError> {
        let source = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(id, &source)
    }

    /// Every prompt received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().map(|l| l.clone()).unwrap_or_default()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().map(|l| l.len()).unwrap_or_default()
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &str, _sampling: Sampling) -> Result<String, LlmError> {
        if let Ok(mut log) = self.log.lock() {
            log.push(prompt.to_string());
        }
        for rule in &self.rules {
            if !rule.matcher.is_match(prompt) {
                continue;
            }
            let n = rule.hits.fetch_add(1, Ordering::SeqCst);
            return match &rule.reply {
                Reply::Fixed(r) => Ok(r.clone()),
                Reply::Sequence(rs) => Ok(rs[n.min(rs.len() - 1)].clone()),
                Reply::Unreachable => Err(LlmError::Unreachable {
                    endpoint: format!("scripted:{}", self.id),
                    detail: "simulated outage".into(),
                }),
            };
        }
        self.default.clone().ok_or_else(|| LlmError::NoScriptMatch {
            backend: self.id.clone(),
        })
    }
}
