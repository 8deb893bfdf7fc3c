use serde::{Deserialize, Serialize};

use super::{AugmentedQuestion, PipelineError, UserQuestion};
use crate::context::ContextProfile;
use crate::gateway::PromptTemplate;
use crate::jargon::JargonEntry;
use crate::templates::{AugmentTemplates, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JargonBranch {
    Yes,
    No,
}

impl JargonBranch {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yes => "yes",
            Self::No => "no",
        }
    }
}

pub fn decide_jargon_branch<S: AsRef<str>>(terms: &[S]) -> JargonBranch {
    if terms.is_empty() {
        JargonBranch::No
    } else {
        JargonBranch::Yes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlossaryItem {
    pub term: String,
    pub extended_name: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl From<&JargonEntry> for GlossaryItem {
    fn from(e: &JargonEntry) -> Self {
        Self {
            term: e.term.clone(),
            extended_name: e.extended_name.clone(),
            description: e.description.clone(),
            notes: e.notes.clone(),
        }
    }
}

/// Byte offset of the first occurrence of `term` in `text`, ignoring case.
/// An occurrence bounded by non-alphanumerics is preferred over one inside a
/// longer word.
fn first_appearance(text: &str, term: &str) -> usize {
    let hay = text.to_lowercase();
    let needle = term.trim().to_lowercase();
    if needle.is_empty() {
        return usize::MAX;
    }
    let bounded = |at: usize| {
        let before = hay[..at].chars().next_back();
        let after = hay[at + needle.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    };
    let mut any = None;
    for (at, _) in hay.match_indices(&needle) {
        if bounded(at) {
            return at;
        }
        any.get_or_insert(at);
    }
    any.unwrap_or(usize::MAX)
}

fn fill(name: &str, body: &str, bindings: &[(&str, &str)]) -> Result<String, PipelineError> {
    Ok(PromptTemplate::new(name, body).render(bindings)?)
}

/// Builds the augmented question: context line, glossary lines for the
/// resolved terms (plus a line per unresolved term, if any) and the original
/// question, verbatim.
///
/// Glossary items follow the order in which their terms first appear in the
/// question; terms not found in it go last in input order.
pub fn augment_question(
    question: &UserQuestion,
    context: &ContextProfile,
    entries: &[JargonEntry],
    unresolved: &[String],
    templates: &AugmentTemplates,
) -> Result<AugmentedQuestion, PipelineError> {
    let mut glossary: Vec<(usize, GlossaryItem)> = entries
        .iter()
        .map(|e| (first_appearance(&question.text, &e.term), GlossaryItem::from(e)))
        .collect();
    glossary.sort_by_key(|(pos, _)| *pos);
    let glossary: Vec<GlossaryItem> = glossary.into_iter().map(|(_, g)| g).collect();

    let mut unresolved: Vec<String> = unresolved.to_vec();
    unresolved.sort_by_key(|t| first_appearance(&question.text, t));

    let mut parts = vec![fill(
        "augment.context",
        &templates.context,
        &[
            ("context_name", &context.name),
            ("context_description", &context.description),
        ],
    )?];
    if !glossary.is_empty() || !unresolved.is_empty() {
        parts.push(templates.glossary_header.clone());
        for item in &glossary {
            let mut line = fill(
                "augment.glossary_line",
                &templates.glossary_line,
                &[
                    ("term", &item.term),
                    ("extended_name", &item.extended_name),
                    ("description", &item.description),
                ],
            )?;
            if let Some(notes) = &item.notes {
                line.push_str(&fill("augment.notes_suffix", &templates.notes_suffix, &[("notes", notes)])?);
            }
            parts.push(line);
        }
        for term in &unresolved {
            parts.push(fill("augment.unresolved_line", &templates.unresolved_line, &[("term", term)])?);
        }
    }
    parts.push(fill("augment.question", &templates.question, &[("question", &question.text)])?);

    Ok(AugmentedQuestion {
        question_id: question.id.clone(),
        original_text: question.text.clone(),
        context_name: context.name.clone(),
        glossary,
        unresolved,
        rendered_text: parts.join(&templates.separator),
    })
}

fn quoted_list(terms: &[String]) -> String {
    let quoted: Vec<String> = terms.iter().map(|t| format!("\"{t}\"")).collect();
    match quoted.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{} and {last}", rest.join(", ")),
        _ => quoted.concat(),
    }
}

/// The fixed reply for questions whose jargon is missing from the dictionary.
/// Terms are named in input order.
pub fn synthesize_miss_response(unresolved: &[String], templates: &TemplateSet) -> Result<String, PipelineError> {
    if unresolved.is_empty() {
        return Err(PipelineError::NoUnresolvedTerms);
    }
    Ok(templates.miss.render(&[("terms", &quoted_list(unresolved))])?)
}
