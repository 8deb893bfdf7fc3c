use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::gateway::{
    inspect_term_list, serialize_term_list, Gateway, LlmRequest, Matcher, ScriptRule,
    ScriptedBackend,
};
use crate::templates::TemplateSet;

/// Question templates with one to five abbreviation slots.
pub const QUESTION_TEMPLATES: [&str; 13] = [
    "What does the abbreviation {abbr1} stand for?",
    "Can you explain the meaning of {abbr1}?",
    "What is the full form of {abbr1}?",
    "{abbr1} is an abbreviation for what?",
    "What do the abbreviations {abbr1} and {abbr2} mean?",
    "In the case where {abbr1} > 0.5, how much should {abbr2} be?",
    "What is the relationship between {abbr1} and {abbr2}?",
    "Consider {abbr1} = 1.5 and {abbr2} < 0.1, what would {abbr3} be?",
    "{abbr1} and {abbr2} are the same. Should {abbr3} be high or low?",
    "What is the state of {abbr1}, {abbr2} during {abbr3} operation?",
    "We need 10ns {abbr1} to achieve 40{abbr2} in {abbr3}. What should be {abbr4}?",
    "In any of the {abbr1}, {abbr2}/{abbr3}/{abbr4} should be what nature?",
    "{abbr1}=10, {abbr2}=5, {abbr3}<0.1 in {abbr4}. How should I set {abbr5}?",
];

/// A fixed pool of generated abbreviations, lengths 2-4.
pub const SAMPLE_ABBREVIATIONS: [&str; 30] = [
    "TS", "IE", "MI", "SF", "MP", "UM", "ES", "PE", "UW", "SU", "FSU", "QMB", "KPU", "VMT", "ESO", "ARI", "SPA",
    "MTD", "GTC", "ODV", "SLBG", "MUBO", "ROSN", "VPPL", "PIOF", "CCPP", "MBST", "UTUU", "NIRE", "STUP",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    pub id: String,
    pub text: String,
    pub slots: usize,
}

impl QuestionTemplate {
    /// Slots are `{abbr1}` .. `{abbrN}`, each used exactly once, N in 1-5.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self, EvalError> {
        let id = id.into();
        let text = text.into();
        let bad = |reason: String| EvalError::InvalidTemplate {
            id: id.clone(),
            reason,
        };
        let re = regex::Regex::new(r"\{abbr(\d+)\}").expect("static pattern");
        let mut seen = Vec::new();
        for cap in re.captures_iter(&text) {
            let n: usize = cap[1].parse().map_err(|_| bad("slot number too large".into()))?;
            if seen.contains(&n) {
                return Err(bad(format!("slot abbr{n} used twice")));
            }
            seen.push(n);
        }
        seen.sort_unstable();
        let slots = seen.len();
        if slots == 0 || slots > 5 {
            return Err(bad(format!("{slots} slots; expected 1-5")));
        }
        if seen != (1..=slots).collect::<Vec<_>>() {
            return Err(bad("slots must be numbered abbr1..abbrN".into()));
        }
        Ok(Self { id, text, slots })
    }

    pub fn render<S: AsRef<str>>(&self, abbreviations: &[S]) -> Result<String, EvalError> {
        if abbreviations.len() != self.slots {
            return Err(EvalError::InvalidTemplate {
                id: self.id.clone(),
                reason: format!("{} abbreviations for {} slots", abbreviations.len(), self.slots),
            });
        }
        let mut out = self.text.clone();
        for (i, a) in abbreviations.iter().enumerate() {
            out = out.replace(&format!("{{abbr{}}}", i + 1), a.as_ref());
        }
        Ok(out)
    }
}

pub fn default_question_templates() -> Vec<QuestionTemplate> {
    QUESTION_TEMPLATES
        .iter()
        .enumerate()
        .map(|(i, t)| QuestionTemplate::new(format!("t{:02}", i + 1), *t).expect("bundled templates are valid"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbrevCase {
    pub template_id: String,
    pub abbreviations: Vec<String>,
    pub rendered_question: String,
}

impl AbbrevCase {
    pub fn new(template: &QuestionTemplate, abbreviations: Vec<String>) -> Result<Self, EvalError> {
        let rendered_question = template.render(&abbreviations)?;
        Ok(Self {
            template_id: template.id.clone(),
            abbreviations,
            rendered_question,
        })
    }

    pub fn bucket(&self) -> usize {
        self.abbreviations.len()
    }
}

/// `per_bucket` cases for each abbreviation count 1-5. Templates of a bucket
/// are used in turn; a case's abbreviations are distinct, drawn from the
/// deduplicated pool with a seeded generator.
pub fn render_cases<S: AsRef<str>>(
    templates: &[QuestionTemplate],
    abbreviations: &[S],
    per_bucket: usize,
    seed: u64,
) -> Result<Vec<AbbrevCase>, EvalError> {
    if per_bucket == 0 {
        return Err(EvalError::ZeroCount);
    }
    let mut seen = BTreeSet::new();
    let pool: Vec<&str> = abbreviations
        .iter()
        .map(|a| a.as_ref().trim())
        .filter(|a| !a.is_empty() && seen.insert(a.to_string()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(per_bucket * 5);
    for bucket in 1..=5 {
        let bucket_templates: Vec<&QuestionTemplate> = templates.iter().filter(|t| t.slots == bucket).collect();
        if bucket_templates.is_empty() {
            return Err(EvalError::NoTemplateForBucket(bucket));
        }
        if pool.len() < bucket {
            return Err(EvalError::NotEnoughAbbreviations {
                needed: bucket,
                available: pool.len(),
            });
        }
        for i in 0..per_bucket {
            let template = bucket_templates[i % bucket_templates.len()];
            let chosen = sample(&mut rng, pool.len(), bucket)
                .into_iter()
                .map(|j| pool[j].to_string())
                .collect();
            cases.push(AbbrevCase::new(template, chosen)?);
        }
    }
    Ok(cases)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    /// The reply must be exactly a list of strings naming every inserted
    /// abbreviation as its own item and nothing else.
    #[default]
    Strict,
    /// Every inserted abbreviation must be a standalone item of the parsed
    /// list; extra items and surrounding text are tolerated.
    Lenient,
}

/// Judges parsed terms against the inserted abbreviations. Items are
/// compared after trimming, case-sensitively.
pub fn score_abbrev_case<S: AsRef<str>>(inserted: &[S], parsed: &[S], mode: ScoringMode) -> bool {
    let items: BTreeSet<&str> = parsed.iter().map(|p| p.as_ref().trim()).collect();
    let wanted: BTreeSet<&str> = inserted.iter().map(|a| a.as_ref().trim()).collect();
    let contains_all = wanted.is_subset(&items);
    match mode {
        ScoringMode::Lenient => contains_all,
        ScoringMode::Strict => contains_all && items.is_subset(&wanted),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub parsed: Option<Vec<String>>,
    pub well_formed: bool,
    pub correct: bool,
}

/// Parses and scores one raw model reply.
pub fn score_response(case: &AbbrevCase, raw: &str, mode: ScoringMode) -> ScoredResponse {
    match inspect_term_list(raw) {
        Ok(p) => {
            let judged = score_abbrev_case(&case.abbreviations, &p.terms, mode);
            let correct = match mode {
                ScoringMode::Strict => p.well_formed && judged,
                ScoringMode::Lenient => judged,
            };
            ScoredResponse {
                parsed: Some(p.terms),
                well_formed: p.well_formed,
                correct,
            }
        }
        Err(_) => ScoredResponse {
            parsed: None,
            well_formed: false,
            correct: false,
        },
    }
}

#[derive(Debug, Clone)]
pub struct AbbrevRunOptions {
    pub backend_id: String,
    pub mode: ScoringMode,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub parallel: bool,
    /// Recorded in the report.
    pub seed: Option<u64>,
}

impl Default for AbbrevRunOptions {
    fn default() -> Self {
        Self {
            backend_id: "default".into(),
            mode: ScoringMode::Strict,
            temperature: 0.0,
            max_output_tokens: 256,
            parallel: true,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseOutcome {
    pub case: AbbrevCase,
    pub response: Option<String>,
    pub parsed: Option<Vec<String>>,
    pub correct: bool,
    /// Why the case needs a human look: backend failure or unparseable reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub bucket: usize,
    pub cases: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbbrevReport {
    pub backend_id: String,
    pub mode: ScoringMode,
    pub seed: Option<u64>,
    pub buckets: Vec<BucketAccuracy>,
    pub outcomes: Vec<CaseOutcome>,
}

impl AbbrevReport {
    /// Aggregates outcomes per bucket; the result does not depend on the
    /// order of `outcomes` apart from the stored list itself.
    pub fn from_outcomes(backend_id: &str, mode: ScoringMode, seed: Option<u64>, outcomes: Vec<CaseOutcome>) -> Self {
        let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for o in &outcomes {
            let e = tally.entry(o.case.bucket()).or_default();
            e.0 += 1;
            e.1 += usize::from(o.correct);
        }
        let buckets = tally
            .into_iter()
            .map(|(bucket, (cases, correct))| BucketAccuracy {
                bucket,
                cases,
                correct,
                accuracy: correct as f64 / cases as f64,
            })
            .collect();
        Self {
            backend_id: backend_id.to_string(),
            mode,
            seed,
            buckets,
            outcomes,
        }
    }

    pub fn accuracy(&self, bucket: usize) -> Option<f64> {
        self.buckets.iter().find(|b| b.bucket == bucket).map(|b| b.accuracy)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &CaseOutcome> {
        self.outcomes.iter().filter(|o| o.flag.is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sends each case through the jargon-identification prompt once and scores
/// the raw reply. Backend failures count as incorrect and are flagged.
pub fn run_abbrev_experiment(
    cases: &[AbbrevCase],
    gateway: &Gateway,
    templates: &TemplateSet,
    options: &AbbrevRunOptions,
) -> Result<AbbrevReport, EvalError> {
    if cases.is_empty() {
        return Err(EvalError::EmptyCases);
    }
    let prompts = cases
        .iter()
        .map(|c| templates.jargon.render(&[("question", &c.rendered_question)]))
        .collect::<Result<Vec<_>, _>>()?;
    let one = |(case, prompt): (&AbbrevCase, &String)| {
        let request = LlmRequest::new(options.backend_id.clone(), prompt.clone())
            .with_sampling(options.temperature, options.max_output_tokens);
        match gateway.complete(&request) {
            Ok(resp) => {
                let scored = score_response(case, &resp.text, options.mode);
                CaseOutcome {
                    case: case.clone(),
                    flag: scored.parsed.is_none().then(|| "reply contains no list".to_string()),
                    response: Some(resp.text),
                    parsed: scored.parsed,
                    correct: scored.correct,
                }
            }
            Err(e) => CaseOutcome {
                case: case.clone(),
                response: None,
                parsed: None,
                correct: false,
                flag: Some(format!("backend failure: {e}")),
            },
        }
    };
    let outcomes: Vec<CaseOutcome> = if options.parallel {
        cases.par_iter().zip(prompts.par_iter()).map(one).collect()
    } else {
        cases.iter().zip(prompts.iter()).map(one).collect()
    };
    Ok(AbbrevReport::from_outcomes(&options.backend_id, options.mode, options.seed, outcomes))
}

/// A backend that answers each case's jargon prompt with exactly the
/// inserted abbreviations as a JSON list.
pub fn echo_backend(id: &str, cases: &[AbbrevCase], templates: &TemplateSet) -> Result<ScriptedBackend, EvalError> {
    let mut backend = ScriptedBackend::new(id);
    for case in cases {
        let prompt = templates.jargon.render(&[("question", &case.rendered_question)])?;
        backend = backend.rule(ScriptRule::new(
            Matcher::contains(prompt),
            serialize_term_list(&case.abbreviations),
        ));
    }
    Ok(backend)
}
