//! The two evaluation protocols: abbreviation identification over seeded
//! synthetic questions, and repeated multiple-choice quizzes.

mod abbrev;
mod letters;
mod quiz;
mod report;

use thiserror::Error;

use crate::gateway::TemplateError;

pub use abbrev::{
    default_question_templates, echo_backend, render_cases, run_abbrev_experiment, score_abbrev_case,
    score_response, AbbrevCase, AbbrevReport, AbbrevRunOptions, BucketAccuracy, CaseOutcome, QuestionTemplate,
    ScoredResponse, ScoringMode, SAMPLE_ABBREVIATIONS, QUESTION_TEMPLATES,
};
pub use letters::{build_letter_distribution, generate_abbreviations, AbbrevLength, LetterDistribution};
pub use quiz::{
    grade_response, load_quiz, parse_quiz, render_quiz_prompt, run_quiz, Grade, GradeRule, PipelineAnswerer,
    PlainRagAnswerer, Quiz, QuizAnswerer, QuizArm, QuizChoice, QuizItem, QuizItemOutcome, QuizReport,
    VanillaAnswerer,
};
pub use report::{format_percent, render_abbrev_table, render_quiz_table};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("word list has no words starting with a letter ({skipped} skipped)")]
    EmptyWordList { skipped: usize },
    #[error("abbreviation length {0} is outside 2-4")]
    InvalidLength(usize),
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("question template `{id}`: {reason}")]
    InvalidTemplate { id: String, reason: String },
    #[error("no question template has {0} abbreviation slots")]
    NoTemplateForBucket(usize),
    #[error("a case needs {needed} distinct abbreviations but only {available} are available")]
    NotEnoughAbbreviations { needed: usize, available: usize },
    #[error("no cases to run")]
    EmptyCases,
    #[error("trials must be at least 1")]
    ZeroTrials,
    #[error("quiz item {index}: {reason}")]
    InvalidQuizItem { index: usize, reason: String },
    #[error("quiz file: {0}")]
    QuizSyntax(#[from] toml::de::Error),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
