use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepName {
    IdentifyJargon,
    IdentifyContext,
    QueryJargon,
    MissResponse,
    AugmentQuestion,
    Retrieve,
    GenerateAnswer,
}

impl StepName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::IdentifyJargon => "identify_jargon",
            Self::IdentifyContext => "identify_context",
            Self::QueryJargon => "query_jargon",
            Self::MissResponse => "miss_response",
            Self::AugmentQuestion => "augment_question",
            Self::Retrieve => "retrieve",
            Self::GenerateAnswer => "generate_answer",
        }
    }

    /// Steps whose record carries the branch taken.
    pub fn is_branching(self) -> bool {
        matches!(self, Self::IdentifyJargon | Self::QueryJargon)
    }
}

impl fmt::Display for StepName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_name: StepName,
    /// The prompt sent to the model; for `retrieve`, the query text.
    pub prompt_text: Option<String>,
    pub raw_response: Option<String>,
    pub parsed_summary: String,
    pub branch_taken: Option<String>,
    pub duration_ms: u64,
}

impl StepRecord {
    pub fn new(step_name: StepName, parsed_summary: impl Into<String>) -> Self {
        Self {
            step_name,
            prompt_text: None,
            raw_response: None,
            parsed_summary: parsed_summary.into(),
            branch_taken: None,
            duration_ms: 0,
        }
    }

    pub fn exchange(mut self, prompt: impl Into<String>, raw: Option<String>) -> Self {
        self.prompt_text = Some(prompt.into());
        self.raw_response = raw;
        self
    }

    pub fn branch(mut self, branch: impl Into<String>) -> Self {
        self.branch_taken = Some(branch.into());
        self
    }

    pub fn took(mut self, elapsed: Duration) -> Self {
        self.duration_ms = elapsed.as_millis().min(u64::MAX as u128) as u64;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub question_id: String,
    pub steps: Vec<StepRecord>,
}

impl PipelineTrace {
    pub fn new(question_id: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            steps: Vec::new(),
        }
    }

    pub fn step_names(&self) -> Vec<StepName> {
        self.steps.iter().map(|s| s.step_name).collect()
    }

    pub fn step(&self, name: StepName) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step_name == name)
    }

    /// The trace with every duration zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        for s in &mut t.steps {
            s.duration_ms = 0;
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace `{0}` already recorded")]
    Duplicate(String),
    #[error("trace log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace log line {line}: {source}")]
    Corrupt {
        line: usize,
        source: serde_json::Error,
    },
}

struct TraceLog {
    traces: HashMap<String, PipelineTrace>,
    file: Option<File>,
}

/// Append-only trace storage, optionally mirrored to a JSON-lines file.
pub struct TraceStore {
    inner: Mutex<TraceLog>,
}

impl fmt::Debug for TraceStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TraceStore").field("len", &self.len()).finish()
    }
}

impl Default for TraceStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl TraceStore {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(TraceLog {
                traces: HashMap::new(),
                file: None,
            }),
        }
    }

    /// Opens (or creates) the log at `path` and loads the traces already in it.
    pub fn open(path: &Path) -> Result<Self, TraceError> {
        let mut traces = HashMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let trace: PipelineTrace =
                    serde_json::from_str(&line).map_err(|source| TraceError::Corrupt { line: i + 1, source })?;
                traces.insert(trace.question_id.clone(), trace);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(TraceLog {
                traces,
                file: Some(file),
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, TraceLog> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn append(&self, trace: PipelineTrace) -> Result<(), TraceError> {
        let mut log = self.lock();
        if log.traces.contains_key(&trace.question_id) {
            return Err(TraceError::Duplicate(trace.question_id));
        }
        if let Some(file) = log.file.as_mut() {
            let mut line = serde_json::to_string(&trace).expect("trace serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        log.traces.insert(trace.question_id.clone(), trace);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<PipelineTrace> {
        self.lock().traces.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.lock().traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
