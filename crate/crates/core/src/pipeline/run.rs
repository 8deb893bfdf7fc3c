use std::time::Instant;

use super::augment::{augment_question, decide_jargon_branch, synthesize_miss_response, JargonBranch};
use super::trace::{PipelineTrace, StepName, StepRecord};
use super::{
    AnswerKind, AnswerResult, AugmentedQuestion, MissPolicy, NoJargonPath, PipelineConfig, PipelineError,
    PipelineFailure, UserQuestion,
};
use crate::context::{classify_context, context_prompt, ClassifyOptions, ContextFallback, ContextProfile, ContextRegistry};
use crate::gateway::{parse_term_list, serialize_term_list, Gateway, LlmRequest, PromptTemplate};
use crate::jargon::JargonStore;
use crate::retriever::{CorpusSnapshot, Embedder, IndexError, RetrievedChunk};
use crate::templates::TemplateSet;
use crate::text::dedup_terms;

/// Everything a run reads. All of it is shared read-only.
#[derive(Clone, Copy)]
pub struct PipelineResources<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn Embedder,
    pub registry: &'a ContextRegistry,
    pub dictionary: &'a JargonStore,
    pub corpus: &'a CorpusSnapshot,
    pub templates: &'a TemplateSet,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Use this context instead of asking the model.
    pub context_override: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub result: AnswerResult,
    pub trace: PipelineTrace,
}

struct Exchange<T> {
    prompt: String,
    raw: Option<String>,
    attempts: u32,
    outcome: Result<T, PipelineError>,
}

struct Runner<'a> {
    question: &'a UserQuestion,
    config: &'a PipelineConfig,
    res: PipelineResources<'a>,
    trace: PipelineTrace,
}

fn attempts_note(attempts: u32) -> String {
    if attempts > 1 {
        format!(" (attempt {attempts})")
    } else {
        String::new()
    }
}

impl<'a> Runner<'a> {
    fn new(question: &'a UserQuestion, config: &'a PipelineConfig, res: PipelineResources<'a>) -> Self {
        Self {
            question,
            config,
            res,
            trace: PipelineTrace::new(question.id.clone()),
        }
    }

    fn check(&self) -> Result<(), PipelineError> {
        self.config.validate()?;
        if !self.res.gateway.contains(&self.config.llm_backend) {
            return Err(PipelineError::Config(format!(
                "llm backend `{}` is not registered",
                self.config.llm_backend
            )));
        }
        Ok(())
    }

    fn fail(mut self, step: Option<(StepName, Instant)>, error: PipelineError) -> PipelineFailure {
        if let Some((name, start)) = step {
            if self.trace.steps.last().map(|s| s.step_name) != Some(name) {
                self.trace
                    .steps
                    .push(StepRecord::new(name, format!("error: {error}")).took(start.elapsed()));
            }
        }
        PipelineFailure {
            error,
            trace: self.trace,
        }
    }

    /// Sends `base`, re-prompting with the retry note while `parse` rejects
    /// the reply.
    fn converse<T>(&self, step: StepName, base: String, parse: impl Fn(&str) -> Result<T, String>) -> Exchange<T> {
        let mut prompt = base.clone();
        let mut last = None;
        let mut problem = String::new();
        let attempts = self.config.max_parse_retries + 1;
        for attempt in 1..=attempts {
            let request = LlmRequest::new(self.config.llm_backend.clone(), prompt.clone())
                .with_sampling(self.config.temperature, self.config.max_output_tokens);
            let text = match self.res.gateway.complete(&request) {
                Ok(r) => r.text,
                Err(e) => {
                    return Exchange {
                        prompt,
                        raw: last,
                        attempts: attempt,
                        outcome: Err(e.into()),
                    }
                }
            };
            match parse(&text) {
                Ok(v) => {
                    return Exchange {
                        prompt,
                        raw: Some(text),
                        attempts: attempt,
                        outcome: Ok(v),
                    }
                }
                Err(p) => {
                    problem = p;
                    last = Some(text);
                }
            }
            if attempt < attempts {
                prompt = self.res.templates.retry_prompt(&base, &problem);
            }
        }
        Exchange {
            prompt,
            outcome: Err(PipelineError::Parse {
                step,
                attempts,
                problem,
                last_response: last.clone().unwrap_or_default(),
            }),
            raw: last,
            attempts,
        }
    }

    fn record_exchange<T>(&mut self, step: StepName, ex: &Exchange<T>, summary: String, start: Instant) {
        self.trace.steps.push(
            StepRecord::new(step, summary)
                .exchange(ex.prompt.clone(), ex.raw.clone())
                .took(start.elapsed()),
        );
    }

    fn identify_jargon(&mut self) -> Result<Vec<String>, PipelineError> {
        let start = Instant::now();
        let step = StepName::IdentifyJargon;
        let base = self.res.templates.jargon.render(&[("question", &self.question.text)])?;
        let ex = self.converse(step, base, |raw| parse_term_list(raw).map_err(|e| e.to_string()));
        match ex.outcome {
            Ok(ref terms) => {
                let terms = dedup_terms(terms);
                let branch = decide_jargon_branch(&terms);
                let summary = format!("{}{}", serialize_term_list(&terms), attempts_note(ex.attempts));
                self.record_exchange(step, &ex, summary, start);
                if let Some(last) = self.trace.steps.last_mut() {
                    last.branch_taken = Some(branch.as_str().into());
                }
                Ok(terms)
            }
            Err(ref e) => {
                let summary = format!("error: {e}");
                self.record_exchange(step, &ex, summary, start);
                ex.outcome.map(|_| Vec::new())
            }
        }
    }

    fn identify_context(&mut self, context_override: Option<&str>) -> Result<ContextProfile, PipelineError> {
        let start = Instant::now();
        let step = StepName::IdentifyContext;
        if let Some(name) = context_override {
            let profile = self
                .res
                .registry
                .get(name)
                .cloned()
                .ok_or_else(|| PipelineError::UnknownContext(name.to_string()))?;
            self.trace.steps.push(
                StepRecord::new(step, format!("{} (override)", profile.name)).took(start.elapsed()),
            );
            return Ok(profile);
        }
        let options = ClassifyOptions {
            backend_id: &self.config.llm_backend,
            temperature: self.config.temperature,
            max_output_tokens: self.config.max_output_tokens,
            max_retries: self.config.max_parse_retries,
            fallback: self
                .config
                .fallback_context
                .clone()
                .map(ContextFallback::Profile)
                .unwrap_or_default(),
        };
        match classify_context(&self.question.text, self.res.registry, self.res.gateway, self.res.templates, &options) {
            Ok(c) => {
                let mut summary = c.profile.name.clone();
                if c.used_fallback {
                    summary.push_str(" (fallback)");
                }
                summary.push_str(&attempts_note(c.attempts));
                self.trace.steps.push(
                    StepRecord::new(step, summary)
                        .exchange(c.prompt, Some(c.raw_response))
                        .took(start.elapsed()),
                );
                Ok(c.profile)
            }
            Err(e) => {
                let e = PipelineError::from(e);
                let prompt = context_prompt(&self.question.text, self.res.registry, self.res.templates).ok();
                let last = match &e {
                    PipelineError::Parse { last_response, .. } => Some(last_response.clone()),
                    _ => None,
                };
                let mut record = StepRecord::new(step, format!("error: {e}")).took(start.elapsed());
                record.prompt_text = prompt;
                record.raw_response = last;
                self.trace.steps.push(record);
                Err(e)
            }
        }
    }

    fn augment(
        &mut self,
        context: &ContextProfile,
        hits: &[crate::jargon::JargonEntry],
        unresolved: &[String],
    ) -> Result<AugmentedQuestion, PipelineError> {
        let start = Instant::now();
        let aug = augment_question(self.question, context, hits, unresolved, &self.res.templates.augment)?;
        self.trace
            .steps
            .push(StepRecord::new(StepName::AugmentQuestion, aug.rendered_text.clone()).took(start.elapsed()));
        Ok(aug)
    }

    fn retrieve(&mut self, query: &str) -> Result<Vec<RetrievedChunk>, PipelineError> {
        let start = Instant::now();
        let vector = self.res.embedder.embed(query)?;
        let hits = match self.res.corpus.retrieve(&vector, self.config.top_k) {
            Ok(h) => h,
            Err(IndexError::Empty | IndexError::ZeroNorm) => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let summary = if hits.is_empty() {
            "no chunks".to_string()
        } else {
            hits.iter()
                .map(|h| format!("{} {:.4}", h.chunk, h.similarity))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let mut record = StepRecord::new(StepName::Retrieve, summary).took(start.elapsed());
        record.prompt_text = Some(query.to_string());
        self.trace.steps.push(record);
        Ok(hits)
    }

    fn generate(&mut self, question_block: &str, retrieved: &[RetrievedChunk]) -> Result<String, PipelineError> {
        let start = Instant::now();
        let step = StepName::GenerateAnswer;
        let answer = &self.res.templates.answer;
        let documents = if retrieved.is_empty() {
            "(no documents found)".to_string()
        } else {
            let format = PromptTemplate::new("answer.document_format", answer.document_format.clone());
            retrieved
                .iter()
                .map(|c| {
                    format.render(&[
                        ("rank", &c.rank.to_string()),
                        ("text", &c.text),
                        ("chunk", &c.chunk.to_string()),
                    ])
                })
                .collect::<Result<Vec<_>, _>>()?
                .join("\n\n")
        };
        let base = answer.prompt.render(&[("question", question_block), ("documents", &documents)])?;
        let ex = self.converse(step, base, |raw| {
            let t = raw.trim();
            if t.is_empty() {
                Err("the answer was empty".to_string())
            } else {
                Ok(t.to_string())
            }
        });
        let summary = match &ex.outcome {
            Ok(a) => format!("{}{}", a, attempts_note(ex.attempts)),
            Err(e) => format!("error: {e}"),
        };
        self.record_exchange(step, &ex, summary, start);
        ex.outcome
    }

    fn question_block(&self) -> Result<String, PipelineError> {
        Ok(PromptTemplate::new("augment.question", self.res.templates.augment.question.clone())
            .render(&[("question", &self.question.text)])?)
    }

    fn finish(self, result: AnswerResult) -> PipelineRun {
        PipelineRun {
            result,
            trace: self.trace,
        }
    }
}

fn answer_result(question: &UserQuestion) -> AnswerResult {
    AnswerResult {
        kind: AnswerKind::Answer,
        answer_text: None,
        retrieved: Vec::new(),
        unresolved_terms: Vec::new(),
        miss_message: None,
        jargon: Vec::new(),
        context_name: None,
        glossary: Vec::new(),
        retrieval_query: None,
        trace_id: question.id.clone(),
    }
}

macro_rules! step {
    ($runner:ident, $name:expr, $body:expr) => {{
        let start = Instant::now();
        match $body {
            Ok(v) => v,
            Err(e) => return Err($runner.fail(Some(($name, start)), e)),
        }
    }};
}

/// Runs the full workflow for one question.
///
/// With the strict miss policy, any term missing from the dictionary ends the
/// run with the miss response before anything is embedded, retrieved or
/// generated.
pub fn run_pipeline(
    question: &UserQuestion,
    config: &PipelineConfig,
    res: PipelineResources<'_>,
    options: &RunOptions,
) -> Result<PipelineRun, PipelineFailure> {
    let mut run = Runner::new(question, config, res);
    if let Err(e) = run.check() {
        return Err(run.fail(None, e));
    }
    let mut result = answer_result(question);

    let terms = step!(run, StepName::IdentifyJargon, run.identify_jargon());
    result.jargon = terms.clone();

    let (query, question_block) = match (decide_jargon_branch(&terms), config.no_jargon_path) {
        (JargonBranch::No, NoJargonPath::Passthrough) => {
            let block = step!(run, StepName::AugmentQuestion, run.question_block());
            (question.text.clone(), block)
        }
        (JargonBranch::No, NoJargonPath::ContextOnly) => {
            let context = step!(
                run,
                StepName::IdentifyContext,
                run.identify_context(options.context_override.as_deref())
            );
            result.context_name = Some(context.name.clone());
            let aug = step!(run, StepName::AugmentQuestion, run.augment(&context, &[], &[]));
            (aug.rendered_text.clone(), aug.rendered_text)
        }
        (JargonBranch::Yes, _) => {
            let context = step!(
                run,
                StepName::IdentifyContext,
                run.identify_context(options.context_override.as_deref())
            );
            result.context_name = Some(context.name.clone());

            let start = Instant::now();
            let lookup = step!(
                run,
                StepName::QueryJargon,
                res.dictionary.lookup(&terms, &context.name).map_err(PipelineError::from)
            );
            let hit_terms: Vec<&str> = lookup.hits.iter().map(|e| e.term.as_str()).collect();
            let branch = if lookup.misses.is_empty() { "hit" } else { "miss" };
            run.trace.steps.push(
                StepRecord::new(
                    StepName::QueryJargon,
                    format!(
                        "hits: {}; misses: {}",
                        serialize_term_list(&hit_terms),
                        serialize_term_list(&lookup.misses)
                    ),
                )
                .branch(branch)
                .took(start.elapsed()),
            );

            if !lookup.misses.is_empty() && config.miss_policy == MissPolicy::Strict {
                let start = Instant::now();
                let message = step!(
                    run,
                    StepName::MissResponse,
                    synthesize_miss_response(&lookup.misses, res.templates)
                );
                run.trace
                    .steps
                    .push(StepRecord::new(StepName::MissResponse, message.clone()).took(start.elapsed()));
                result.kind = AnswerKind::Miss;
                result.unresolved_terms = lookup.misses;
                result.miss_message = Some(message);
                return Ok(run.finish(result));
            }

            let aug = step!(
                run,
                StepName::AugmentQuestion,
                run.augment(&context, &lookup.hits, &lookup.misses)
            );
            result.glossary = aug.glossary.clone();
            (aug.rendered_text.clone(), aug.rendered_text)
        }
    };

    result.retrieved = step!(run, StepName::Retrieve, run.retrieve(&query));
    result.retrieval_query = Some(query);
    let retrieved = result.retrieved.clone();
    result.answer_text = Some(step!(
        run,
        StepName::GenerateAnswer,
        run.generate(&question_block, &retrieved)
    ));
    Ok(run.finish(result))
}

/// Plain retrieval-augmented generation: the original question is embedded
/// as is, with no jargon or context handling.
pub fn run_plain_rag(
    question: &UserQuestion,
    config: &PipelineConfig,
    res: PipelineResources<'_>,
) -> Result<PipelineRun, PipelineFailure> {
    let mut run = Runner::new(question, config, res);
    if let Err(e) = run.check() {
        return Err(run.fail(None, e));
    }
    let mut result = answer_result(question);
    result.retrieved = step!(run, StepName::Retrieve, run.retrieve(&question.text));
    result.retrieval_query = Some(question.text.clone());
    let block = step!(run, StepName::GenerateAnswer, run.question_block());
    let retrieved = result.retrieved.clone();
    result.answer_text = Some(step!(run, StepName::GenerateAnswer, run.generate(&block, &retrieved)));
    Ok(run.finish(result))
}
