mod common;

use common::*;
use glossa_core::gateway::{Gateway, Matcher, ScriptRule, ScriptedBackend};
use glossa_core::jargon::JargonEntry;
use glossa_core::pipeline::{
    run_pipeline, run_plain_rag, AnswerKind, MissPolicy, NoJargonPath, PipelineConfig, PipelineError,
    PipelineResources, RunOptions, StepName, TraceStore, UserQuestion,
};
use glossa_core::templates::TemplateSet;
use std::sync::Arc;

fn config() -> PipelineConfig {
    PipelineConfig {
        llm_backend: "mock".into(),
        top_k: 2,
        ..Default::default()
    }
}

struct World {
    gateway: Gateway,
    backend: Arc<ScriptedBackend>,
    embedder: CountingEmbedder,
    registry: glossa_core::context::ContextRegistry,
    dictionary: glossa_core::jargon::JargonStore,
    corpus: glossa_core::retriever::CorpusSnapshot,
    templates: TemplateSet,
}

impl World {
    fn new(backend: Arc<ScriptedBackend>) -> Self {
        let embedder = CountingEmbedder::new();
        let corpus = disambiguation_corpus(&embedder);
        embedder.calls.store(0, std::sync::atomic::Ordering::SeqCst);
        Self {
            gateway: gateway(backend.clone()),
            backend,
            embedder,
            registry: registry(),
            dictionary: dictionary(),
            corpus,
            templates: TemplateSet::default(),
        }
    }

    fn res(&self) -> PipelineResources<'_> {
        PipelineResources {
            gateway: &self.gateway,
            embedder: &self.embedder,
            registry: &self.registry,
            dictionary: &self.dictionary,
            corpus: &self.corpus,
            templates: &self.templates,
        }
    }
}

fn puc_world() -> World {
    World::new(pipeline_backend("mock", "[\"PUC\"]", "nand-design", "It places peripherals under the array."))
}

#[test]
fn puc_question_resolves_and_ranks_relevant_chunk_first() {
    let w = puc_world();
    let q = UserQuestion::with_id("q1", PUC_QUESTION).unwrap();
    let run = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap();
    let r = &run.result;
    assert_eq!(r.kind, AnswerKind::Answer);
    assert_eq!(r.jargon, vec!["PUC"]);
    assert_eq!(r.context_name.as_deref(), Some("nand-design"));
    assert_eq!(r.glossary[0].extended_name, "Peripheral Under Cell");
    assert_eq!(r.retrieved[0].chunk.doc_id, "nand-puc");
    assert_eq!(r.answer_text.as_deref(), Some("It places peripherals under the array."));
    assert_eq!(
        run.trace.step_names(),
        vec![
            StepName::IdentifyJargon,
            StepName::IdentifyContext,
            StepName::QueryJargon,
            StepName::AugmentQuestion,
            StepName::Retrieve,
            StepName::GenerateAnswer,
        ]
    );
    for s in &run.trace.steps {
        assert_eq!(s.branch_taken.is_some(), s.step_name.is_branching(), "{:?}", s.step_name);
    }
    assert_eq!(run.trace.steps[0].branch_taken.as_deref(), Some("yes"));
    assert_eq!(run.trace.steps[2].branch_taken.as_deref(), Some("hit"));
    let answer_prompt = run.trace.step(StepName::GenerateAnswer).unwrap().prompt_text.clone().unwrap();
    assert!(answer_prompt.contains(RELEVANT_CHUNK));
    assert!(answer_prompt.contains("Peripheral Under Cell"));
}

#[test]
fn plain_rag_falls_for_the_distractor() {
    let w = puc_world();
    let q = UserQuestion::with_id("q1", PUC_QUESTION).unwrap();
    let run = run_plain_rag(&q, &config(), w.res()).unwrap();
    assert_eq!(run.result.retrieved[0].chunk.doc_id, "fab-dispatch");
    assert_eq!(run.trace.step_names(), vec![StepName::Retrieve, StepName::GenerateAnswer]);
}

#[test]
fn no_jargon_passthrough_retrieves_with_original_text() {
    let w = World::new(pipeline_backend("mock", "[]", "general", "Nine o'clock."));
    let q = UserQuestion::with_id("q2", "When does the cafeteria open?").unwrap();
    let run = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap();
    assert_eq!(run.trace.steps[0].branch_taken.as_deref(), Some("no"));
    assert_eq!(
        run.trace.step_names(),
        vec![StepName::IdentifyJargon, StepName::Retrieve, StepName::GenerateAnswer]
    );
    let retrieve = run.trace.step(StepName::Retrieve).unwrap();
    assert_eq!(retrieve.prompt_text.as_deref(), Some(q.text.as_str()));
    assert_eq!(run.result.retrieval_query.as_deref(), Some(q.text.as_str()));
    assert!(run.result.context_name.is_none());
}

#[test]
fn no_jargon_context_only_augments_with_context() {
    let w = World::new(pipeline_backend("mock", "[]", "general", "Nine o'clock."));
    let q = UserQuestion::with_id("q2", "When does the cafeteria open?").unwrap();
    let cfg = PipelineConfig {
        no_jargon_path: NoJargonPath::ContextOnly,
        ..config()
    };
    let run = run_pipeline(&q, &cfg, w.res(), &RunOptions::default()).unwrap();
    assert_eq!(
        run.trace.step_names(),
        vec![
            StepName::IdentifyJargon,
            StepName::IdentifyContext,
            StepName::AugmentQuestion,
            StepName::Retrieve,
            StepName::GenerateAnswer
        ]
    );
    let query = run.result.retrieval_query.unwrap();
    assert!(query.starts_with("Context: general."));
    assert!(query.contains(&q.text));
    assert!(run.result.glossary.is_empty());
}

#[test]
fn strict_miss_stops_before_retrieval() {
    let w = World::new(pipeline_backend("mock", "[\"QZXV\"]", "nand-design", "unused"));
    let q = UserQuestion::with_id("q3", "How do I reset the QZXV counter?").unwrap();
    let run = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap();
    let r = &run.result;
    assert_eq!(r.kind, AnswerKind::Miss);
    assert_eq!(r.unresolved_terms, vec!["QZXV"]);
    assert!(r.retrieved.is_empty());
    assert!(r.answer_text.is_none());
    let msg = r.miss_message.as_deref().unwrap();
    assert!(msg.contains("QZXV") && msg.contains("check the spelling") && msg.contains("knowledge base manager"));
    assert_eq!(w.embedder.calls(), 0);
    assert!(w.backend.prompts().iter().all(|p| !p.contains("Answer the question using")));
    assert_eq!(
        run.trace.step_names(),
        vec![
            StepName::IdentifyJargon,
            StepName::IdentifyContext,
            StepName::QueryJargon,
            StepName::MissResponse
        ]
    );
    assert_eq!(run.trace.steps[2].branch_taken.as_deref(), Some("miss"));
}

#[test]
fn partial_policy_keeps_going_with_annotations() {
    let w = World::new(pipeline_backend("mock", "[\"PUC\", \"QZXV\"]", "nand-design", "Partial answer."));
    let q = UserQuestion::with_id("q4", "Does PUC change the QZXV budget?").unwrap();
    let cfg = PipelineConfig {
        miss_policy: MissPolicy::Partial,
        ..config()
    };
    let run = run_pipeline(&q, &cfg, w.res(), &RunOptions::default()).unwrap();
    assert_eq!(run.result.kind, AnswerKind::Answer);
    let query = run.result.retrieval_query.unwrap();
    assert!(query.contains("Peripheral Under Cell"));
    assert!(query.contains("QZXV: no dictionary entry found"));
    assert_eq!(w.embedder.calls(), 1);
}

#[test]
fn dictionary_write_is_visible_to_next_run() {
    let w = World::new(pipeline_backend("mock", "[\"QZXV\"]", "nand-design", "Now known."));
    let q = UserQuestion::with_id("q5", "How do I reset the QZXV counter?").unwrap();
    assert_eq!(
        run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap().result.kind,
        AnswerKind::Miss
    );
    w.dictionary
        .upsert_entry(JargonEntry::new("QZXV", "nand-design", "Quad Zone Cross Verify", "Verify step."))
        .unwrap();
    let q = UserQuestion::with_id("q6", "How do I reset the QZXV counter?").unwrap();
    let r = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap().result;
    assert_eq!(r.kind, AnswerKind::Answer);
    assert_eq!(r.glossary[0].extended_name, "Quad Zone Cross Verify");
}

#[test]
fn context_override_skips_classification_and_changes_meaning() {
    let w = World::new(pipeline_backend("mock", "[\"RAG\"]", "llm-systems", "ok"));
    let q = UserQuestion::with_id("q7", "What does RAG do?").unwrap();
    let opts = RunOptions {
        context_override: Some("genetics".into()),
    };
    let run = run_pipeline(&q, &config(), w.res(), &opts).unwrap();
    assert_eq!(run.result.glossary[0].extended_name, "Recombination-Activating Gene");
    let ctx = run.trace.step(StepName::IdentifyContext).unwrap();
    assert!(ctx.prompt_text.is_none());
    assert!(w.backend.prompts().iter().all(|p| !p.contains("Identify the context")));

    let bad = RunOptions {
        context_override: Some("astrology".into()),
    };
    let failure = run_pipeline(&q, &config(), w.res(), &bad).unwrap_err();
    assert!(matches!(failure.error, PipelineError::UnknownContext(_)));
}

#[test]
fn malformed_jargon_reply_is_retried_with_a_note() {
    let backend = Arc::new(
        ScriptedBackend::new("mock")
            .rule(ScriptRule::sequence(
                Matcher::contains("Identify every jargon term"),
                vec!["I cannot say.".to_string(), "[\"PUC\"]".to_string()],
            ))
            .on("Identify the context of the question", "Context: nand-design")
            .on("Answer the question using", "fine"),
    );
    let w = World::new(backend);
    let q = UserQuestion::with_id("q8", PUC_QUESTION).unwrap();
    let run = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap();
    let step = &run.trace.steps[0];
    assert!(step.prompt_text.as_deref().unwrap().contains("Your previous reply could not be used"));
    assert!(step.parsed_summary.ends_with("(attempt 2)"));
    assert_eq!(run.trace.steps.len(), 6);
}

#[test]
fn persistent_garbage_fails_with_trace() {
    let backend = Arc::new(ScriptedBackend::new("mock").on("Identify every jargon term", "no list here"));
    let w = World::new(backend.clone());
    let q = UserQuestion::with_id("q9", PUC_QUESTION).unwrap();
    let failure = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap_err();
    assert!(matches!(
        failure.error,
        PipelineError::Parse {
            step: StepName::IdentifyJargon,
            attempts: 3,
            ..
        }
    ));
    assert!(!failure.error.is_retryable());
    assert_eq!(backend.call_count(), 3);
    assert_eq!(failure.trace.step_names(), vec![StepName::IdentifyJargon]);
    assert_eq!(failure.trace.steps[0].raw_response.as_deref(), Some("no list here"));
}

#[test]
fn unreachable_backend_is_retryable() {
    let backend = Arc::new(ScriptedBackend::new("mock").rule(ScriptRule::unreachable(Matcher::contains(""))));
    let w = World::new(backend);
    let q = UserQuestion::with_id("q10", PUC_QUESTION).unwrap();
    let failure = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap_err();
    assert!(matches!(failure.error, PipelineError::Backend(_)));
    assert!(failure.error.is_retryable());
    assert_eq!(failure.trace.steps.len(), 1);
}

#[test]
fn unknown_backend_and_bad_config_are_rejected() {
    let w = puc_world();
    let q = UserQuestion::with_id("q11", PUC_QUESTION).unwrap();
    let cfg = PipelineConfig {
        llm_backend: "nope".into(),
        ..config()
    };
    assert!(matches!(
        run_pipeline(&q, &cfg, w.res(), &RunOptions::default()).unwrap_err().error,
        PipelineError::Config(_)
    ));
    let cfg = PipelineConfig { top_k: 0, ..config() };
    assert!(matches!(
        run_pipeline(&q, &cfg, w.res(), &RunOptions::default()).unwrap_err().error,
        PipelineError::Config(_)
    ));
    assert!(matches!(UserQuestion::new(" \n\t"), Err(PipelineError::EmptyQuestion)));
}

#[test]
fn identical_inputs_give_identical_results() {
    let a = puc_world();
    let b = puc_world();
    let q = UserQuestion::with_id("q12", PUC_QUESTION).unwrap();
    let ra = run_pipeline(&q, &config(), a.res(), &RunOptions::default()).unwrap();
    let rb = run_pipeline(&q, &config(), b.res(), &RunOptions::default()).unwrap();
    assert_eq!(
        serde_json::to_string(&ra.result).unwrap(),
        serde_json::to_string(&rb.result).unwrap()
    );
    assert_eq!(ra.trace.without_timings(), rb.trace.without_timings());
}

#[test]
fn concurrent_runs_share_read_only_state() {
    let w = puc_world();
    let traces = TraceStore::in_memory();
    std::thread::scope(|s| {
        for t in 0..4 {
            let w = &w;
            let traces = &traces;
            s.spawn(move || {
                for i in 0..10 {
                    let q = UserQuestion::with_id(format!("t{t}-{i}"), PUC_QUESTION).unwrap();
                    let run = run_pipeline(&q, &config(), w.res(), &RunOptions::default()).unwrap();
                    assert_eq!(run.result.retrieved[0].chunk.doc_id, "nand-puc");
                    traces.append(run.trace).unwrap();
                }
            });
        }
    });
    assert_eq!(traces.len(), 40);
}
