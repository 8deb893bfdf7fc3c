use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{Gateway, LlmRequest};
use crate::pipeline::{run_pipeline, run_plain_rag, AnswerKind, PipelineConfig, PipelineResources, RunOptions, UserQuestion};
use crate::templates::TemplateSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizChoice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizItem {
    pub question: String,
    #[serde(rename = "choice")]
    pub choices: Vec<QuizChoice>,
    pub answer: String,
}

impl QuizItem {
    fn validate(&self, index: usize) -> Result<(), EvalError> {
        let bad = |reason: String| EvalError::InvalidQuizItem { index, reason };
        if self.question.trim().is_empty() {
            return Err(bad("empty question".into()));
        }
        if !(2..=5).contains(&self.choices.len()) {
            return Err(bad(format!("{} choices; expected 2-5", self.choices.len())));
        }
        let mut labels = BTreeSet::new();
        for c in &self.choices {
            let l = c.label.trim().to_lowercase();
            if l.is_empty() || !l.chars().all(|ch| ch.is_alphanumeric()) {
                return Err(bad(format!("label {:?} must be alphanumeric", c.label)));
            }
            if !labels.insert(l) {
                return Err(bad(format!("duplicate label {:?}", c.label)));
            }
        }
        if !labels.contains(&self.answer.trim().to_lowercase()) {
            return Err(bad(format!("answer {:?} is not a choice label", self.answer)));
        }
        Ok(())
    }

    /// The label matching `label`, ignoring case, in its listed spelling.
    fn label_of(&self, label: &str) -> Option<&str> {
        self.choices
            .iter()
            .find(|c| c.label.trim().eq_ignore_ascii_case(label.trim()))
            .map(|c| c.label.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quiz {
    pub name: String,
    #[serde(rename = "item")]
    pub items: Vec<QuizItem>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuizFile {
    name: Option<String>,
    #[serde(rename = "item", default)]
    items: Vec<QuizItem>,
}

/// Parses a quiz: optional `name`, then `[[item]]` records with `question`,
/// `answer` and `[[item.choice]]` entries holding `label` and `text`.
pub fn parse_quiz(source: &str, default_name: &str) -> Result<Quiz, EvalError> {
    let file: QuizFile = toml::from_str(source)?;
    if file.items.is_empty() {
        return Err(EvalError::InvalidQuizItem {
            index: 0,
            reason: "quiz has no items".into(),
        });
    }
    for (i, item) in file.items.iter().enumerate() {
        item.validate(i + 1)?;
    }
    Ok(Quiz {
        name: file.name.unwrap_or_else(|| default_name.to_string()),
        items: file.items,
    })
}

pub fn load_quiz(path: &Path) -> Result<Quiz, EvalError> {
    let source = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("quiz");
    parse_quiz(&source, stem)
}

pub fn render_quiz_prompt(item: &QuizItem, templates: &TemplateSet) -> Result<String, EvalError> {
    let choices: Vec<String> = item.choices.iter().map(|c| format!("{}. {}", c.label, c.text)).collect();
    Ok(templates
        .quiz
        .render(&[("question", &item.question), ("choices", &choices.join("\n"))])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeRule {
    Marker,
    LabelToken,
    ChoiceText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub label: Option<String>,
    pub rule: Option<GradeRule>,
    pub correct: bool,
    /// No label could be extracted; the response needs manual review.
    pub flagged: bool,
}

fn normalize_choice(text: &str) -> String {
    text.trim()
        .trim_end_matches(['.', ' '])
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Extracts the chosen label: the last `Answer: <label>` marker naming a
/// listed label; otherwise the single distinct label appearing as a
/// standalone token; otherwise the single choice whose text appears in the
/// response. Anything else is graded incorrect and flagged.
pub fn grade_response(response: &str, item: &QuizItem) -> Grade {
    let marker = Regex::new(r"(?i)answer\s*(?:is)?\s*[:：]\s*\(?([[:alnum:]]+)\)?").expect("static pattern");
    let picked = marker
        .captures_iter(response)
        .filter_map(|c| item.label_of(&c[1]))
        .last()
        .map(|l| (l.to_string(), GradeRule::Marker))
        .or_else(|| {
            let tokens: BTreeSet<&str> = response
                .split(|c: char| !c.is_alphanumeric())
                .filter_map(|t| item.label_of(t))
                .collect();
            (tokens.len() == 1).then(|| (tokens.into_iter().next().unwrap().to_string(), GradeRule::LabelToken))
        })
        .or_else(|| {
            let hay = normalize_choice(response);
            let hits: Vec<&QuizChoice> = item
                .choices
                .iter()
                .filter(|c| {
                    let t = normalize_choice(&c.text);
                    !t.is_empty() && hay.contains(&t)
                })
                .collect();
            (hits.len() == 1).then(|| (hits[0].label.clone(), GradeRule::ChoiceText))
        });
    match picked {
        Some((label, rule)) => Grade {
            correct: label.eq_ignore_ascii_case(item.answer.trim()),
            label: Some(label),
            rule: Some(rule),
            flagged: false,
        },
        None => Grade {
            label: None,
            rule: None,
            correct: false,
            flagged: true,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuizArm {
    Vanilla,
    Rag,
    Golden,
}

impl QuizArm {
    pub fn display_name(self) -> &'static str {
        match self {
            Self::Vanilla => "Vanilla LLM",
            Self::Rag => "RAG",
            Self::Golden => "Augmented RAG",
        }
    }
}

/// Anything that can answer a rendered quiz prompt.
pub trait QuizAnswerer: Sync {
    fn arm(&self) -> QuizArm;
    fn model(&self) -> &str;
    fn answer(&self, prompt: &str) -> Result<String, String>;
}

/// The model alone, no retrieval.
pub struct VanillaAnswerer<'a> {
    pub gateway: &'a Gateway,
    pub backend_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl QuizAnswerer for VanillaAnswerer<'_> {
    fn arm(&self) -> QuizArm {
        QuizArm::Vanilla
    }

    fn model(&self) -> &str {
        &self.backend_id
    }

    fn answer(&self, prompt: &str) -> Result<String, String> {
        let request = LlmRequest::new(self.backend_id.clone(), prompt)
            .with_sampling(self.temperature, self.max_output_tokens);
        self.gateway.complete(&request).map(|r| r.text).map_err(|e| e.to_string())
    }
}

/// Retrieval with the prompt as query, then generation.
pub struct PlainRagAnswerer<'a> {
    pub resources: PipelineResources<'a>,
    pub config: PipelineConfig,
}

impl QuizAnswerer for PlainRagAnswerer<'_> {
    fn arm(&self) -> QuizArm {
        QuizArm::Rag
    }

    fn model(&self) -> &str {
        &self.config.llm_backend
    }

    fn answer(&self, prompt: &str) -> Result<String, String> {
        let q = UserQuestion::new(prompt).map_err(|e| e.to_string())?;
        let run = run_plain_rag(&q, &self.config, self.resources).map_err(|f| f.error.to_string())?;
        Ok(run.result.answer_text.unwrap_or_default())
    }
}

/// The full augmented pipeline. A miss reply is graded like any answer.
pub struct PipelineAnswerer<'a> {
    pub resources: PipelineResources<'a>,
    pub config: PipelineConfig,
}

impl QuizAnswerer for PipelineAnswerer<'_> {
    fn arm(&self) -> QuizArm {
        QuizArm::Golden
    }

    fn model(&self) -> &str {
        &self.config.llm_backend
    }

    fn answer(&self, prompt: &str) -> Result<String, String> {
        let q = UserQuestion::new(prompt).map_err(|e| e.to_string())?;
        let run = run_pipeline(&q, &self.config, self.resources, &RunOptions::default())
            .map_err(|f| f.error.to_string())?;
        Ok(match run.result.kind {
            AnswerKind::Answer => run.result.answer_text.unwrap_or_default(),
            AnswerKind::Miss => run.result.miss_message.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizItemOutcome {
    pub trial: usize,
    pub item: usize,
    pub response: Option<String>,
    pub grade: Grade,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizReport {
    pub quiz: String,
    pub arm: QuizArm,
    pub model: String,
    pub question_count: usize,
    pub trials: usize,
    pub trial_scores: Vec<usize>,
    pub average: f64,
    pub outcomes: Vec<QuizItemOutcome>,
}

impl QuizReport {
    pub fn flagged(&self) -> impl Iterator<Item = &QuizItemOutcome> {
        self.outcomes.iter().filter(|o| o.grade.flagged)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Asks every item `trials` times, trial by trial, and averages the per-trial
/// scores. Answerer failures score as incorrect and are flagged.
pub fn run_quiz(
    quiz: &Quiz,
    answerer: &dyn QuizAnswerer,
    trials: usize,
    templates: &TemplateSet,
) -> Result<QuizReport, EvalError> {
    if trials == 0 {
        return Err(EvalError::ZeroTrials);
    }
    let prompts = quiz
        .items
        .iter()
        .map(|i| render_quiz_prompt(i, templates))
        .collect::<Result<Vec<_>, _>>()?;
    let mut outcomes = Vec::with_capacity(trials * quiz.items.len());
    let mut trial_scores = Vec::with_capacity(trials);
    for trial in 1..=trials {
        let mut score = 0;
        for (index, (item, prompt)) in quiz.items.iter().zip(&prompts).enumerate() {
            let outcome = match answerer.answer(prompt) {
                Ok(text) => QuizItemOutcome {
                    trial,
                    item: index + 1,
                    grade: grade_response(&text, item),
                    response: Some(text),
                    error: None,
                },
                Err(e) => QuizItemOutcome {
                    trial,
                    item: index + 1,
                    response: None,
                    grade: Grade {
                        label: None,
                        rule: None,
                        correct: false,
                        flagged: true,
                    },
                    error: Some(e),
                },
            };
            score += usize::from(outcome.grade.correct);
            outcomes.push(outcome);
        }
        trial_scores.push(score);
    }
    let average = trial_scores.iter().sum::<usize>() as f64 / trials as f64;
    Ok(QuizReport {
        quiz: quiz.name.clone(),
        arm: answerer.arm(),
        model: answerer.model().to_string(),
        question_count: quiz.items.len(),
        trials,
        trial_scores,
        average,
        outcomes,
    })
}
