//! The fixed wording of every prompt and templated response.
//!
//! Defaults ship in `templates/default.toml`; a deployment may point the
//! configuration at its own copy.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{PromptTemplate, TemplateError};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/default.toml");

#[derive(Debug, Error)]
pub enum TemplateSetError {
    #[error("reading templates from {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing templates: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("template `{template}` is missing required placeholder `{name}`")]
    MissingPlaceholder { template: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct AugmentTemplates {
    pub context: String,
    pub glossary_header: String,
    pub glossary_line: String,
    pub notes_suffix: String,
    pub unresolved_line: String,
    pub question: String,
    pub separator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct AnswerTemplate {
    #[serde(flatten)]
    pub prompt: PromptTemplate,
    pub document_format: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RetryTemplate {
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TemplateSet {
    pub jargon: PromptTemplate,
    pub context: PromptTemplate,
    pub augment: AugmentTemplates,
    pub answer: AnswerTemplate,
    pub summarize: PromptTemplate,
    pub miss: PromptTemplate,
    pub quiz: PromptTemplate,
    pub retry: RetryTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::from_toml(DEFAULT_TEMPLATES).expect("bundled templates are valid")
    }
}

fn require(t: &PromptTemplate, names: &[&str]) -> Result<(), TemplateSetError> {
    let present = t.placeholders()?;
    for name in names {
        if !present.iter().any(|p| p == name) {
            return Err(TemplateSetError::MissingPlaceholder {
                template: t.name.clone(),
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

impl TemplateSet {
    pub fn from_toml(source: &str) -> Result<Self, TemplateSetError> {
        let set: TemplateSet = toml::from_str(source)?;
        require(&set.jargon, &["question"])?;
        require(&set.context, &["question", "contexts", "few_shot_examples"])?;
        require(&set.answer.prompt, &["question", "documents"])?;
        require(&set.summarize, &["chunk"])?;
        require(&set.miss, &["terms"])?;
        require(&set.quiz, &["question", "choices"])?;
        let a = &set.augment;
        for (name, body, needed) in [
            ("augment.context", &a.context, &["context_name"][..]),
            ("augment.glossary_line", &a.glossary_line, &["term", "extended_name"][..]),
            ("augment.unresolved_line", &a.unresolved_line, &["term"][..]),
            ("augment.question", &a.question, &["question"][..]),
            ("augment.notes_suffix", &a.notes_suffix, &["notes"][..]),
            ("answer.document_format", &set.answer.document_format, &["text"][..]),
        ] {
            require(&PromptTemplate::new(name, body.clone()), needed)?;
        }
        Ok(set)
    }

    pub fn from_file(path: &Path) -> Result<Self, TemplateSetError> {
        let source = std::fs::read_to_string(path).map_err(|source| TemplateSetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&source)
    }

    /// Appends the re-prompt note describing why the previous reply failed.
    pub fn retry_prompt(&self, prompt: &str, problem: &str) -> String {
        let note = PromptTemplate::new("retry", self.retry.note.clone())
            .render(&[("problem", problem)])
            .unwrap_or_else(|_| self.retry.note.clone());
        format!("{prompt}{note}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_templates_load() {
        let set = TemplateSet::default();
        assert_eq!(set.jargon.few_shot_examples.len(), 3);
        let prompt = set.jargon.render(&[("question", "What is PUC?")]).unwrap();
        assert!(prompt.ends_with("Question: What is PUC?\nOutput:"));
        assert!(prompt.find("UECC").unwrap() < prompt.find("What is PUC?").unwrap());
    }

    #[test]
    fn missing_required_placeholder_is_rejected() {
        let broken = DEFAULT_TEMPLATES.replace("Excerpt:\n{chunk}", "Excerpt:");
        assert!(matches!(
            TemplateSet::from_toml(&broken),
            Err(TemplateSetError::MissingPlaceholder { name, .. }) if name == "chunk"
        ));
    }

    #[test]
    fn retry_note_names_the_problem() {
        let set = TemplateSet::default();
        let p = set.retry_prompt("BASE", "no bracketed list found");
        assert!(p.starts_with("BASE"));
        assert!(p.contains("no bracketed list found"));
    }
}
