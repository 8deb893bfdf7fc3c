//! Queue of user reports about terms missing from the dictionary, kept for
//! the people who maintain it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SuggestionError {
    #[error("term is empty")]
    EmptyTerm,
    #[error("suggestion log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("suggestion log line {line}: {source}")]
    Corrupt {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissReport {
    pub term: String,
    #[serde(default)]
    pub suggested_meaning: Option<String>,
    #[serde(default)]
    pub context_name: Option<String>,
    #[serde(default)]
    pub trace_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissTicket {
    pub ticket_id: String,
    #[serde(flatten)]
    pub report: MissReport,
    pub created_at: DateTime<Utc>,
}

struct Queue {
    tickets: Vec<MissTicket>,
    file: Option<File>,
}

/// Append-only; every report gets its own ticket, duplicates included.
pub struct SuggestionQueue {
    inner: Mutex<Queue>,
}

impl std::fmt::Debug for SuggestionQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SuggestionQueue").field("len", &self.list().len()).finish()
    }
}

impl Default for SuggestionQueue {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl SuggestionQueue {
    pub fn in_memory() -> Self {
        Self {
            inner: Mutex::new(Queue {
                tickets: Vec::new(),
                file: None,
            }),
        }
    }

    pub fn open(path: &Path) -> Result<Self, SuggestionError> {
        let mut tickets = Vec::new();
        if path.exists() {
            for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if !line.trim().is_empty() {
                    tickets.push(
                        serde_json::from_str(&line).map_err(|source| SuggestionError::Corrupt { line: i + 1, source })?,
                    );
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            inner: Mutex::new(Queue {
                tickets,
                file: Some(file),
            }),
        })
    }

    pub fn submit(&self, mut report: MissReport) -> Result<MissTicket, SuggestionError> {
        report.term = report.term.trim().to_string();
        if report.term.is_empty() {
            return Err(SuggestionError::EmptyTerm);
        }
        report.suggested_meaning = report.suggested_meaning.filter(|s| !s.trim().is_empty());
        let mut q = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        let ticket = MissTicket {
            ticket_id: format!("miss-{:06}", q.tickets.len() + 1),
            report,
            created_at: Utc::now(),
        };
        if let Some(file) = q.file.as_mut() {
            let mut line = serde_json::to_string(&ticket).expect("ticket serializes");
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        q.tickets.push(ticket.clone());
        Ok(ticket)
    }

    pub fn list(&self) -> Vec<MissTicket> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).tickets.clone()
    }
}
