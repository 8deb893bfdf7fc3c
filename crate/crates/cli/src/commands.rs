use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glossa_core::eval::{
    build_letter_distribution, default_question_templates, echo_backend, generate_abbreviations, load_quiz,
    render_abbrev_table, render_cases, render_quiz_table, run_abbrev_experiment, run_quiz, AbbrevLength,
    AbbrevReport, AbbrevRunOptions, PipelineAnswerer, PlainRagAnswerer, QuizAnswerer, QuizArm, QuizReport,
    ScoringMode, VanillaAnswerer, SAMPLE_ABBREVIATIONS,
};
use glossa_core::gateway::LlmBackend;
use glossa_core::ingest::load_documents;
use glossa_core::{AnswerKind, Config, Engine, JargonEntry};

use crate::api;
use crate::error::{ApiError, ErrorCode};
use crate::ops::{self, AskRequest, AskResponse};

/// Config file read when `--config` is absent.
pub const DEFAULT_CONFIG_FILE: &str = "glossa.toml";

#[derive(Debug, Parser)]
#[command(name = "glossa", version, about = "Jargon-aware question answering over private documents")]
pub struct Cli {
    /// Config file; defaults to ./glossa.toml when present.
    #[arg(long, global = true, env = "GLOSSA_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        /// Listen address; overrides server.bind.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Answer one question.
    Ask(AskArgs),
    /// Chunk, summarize and index documents from a manifest or directory.
    Ingest { path: PathBuf },
    /// Manage the jargon dictionary.
    #[command(subcommand)]
    Dict(DictCommand),
    /// List reported missing terms.
    Misses {
        #[arg(long)]
        json: bool,
    },
    /// Run an evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
pub struct AskArgs {
    pub question: String,
    /// Use this context instead of identifying one.
    #[arg(long)]
    pub context: Option<String>,
    /// Print every pipeline step.
    #[arg(long)]
    pub trace: bool,
    /// Print the response as JSON, as the HTTP service returns it.
    #[arg(long)]
    pub json: bool,
    /// Retrieval on the unmodified question, no jargon handling.
    #[arg(long)]
    pub plain: bool,
    #[arg(long)]
    pub session: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum DictCommand {
    /// Upsert entries from a TSV or CSV file with a header row; `-` reads stdin.
    Import { file: String },
    /// Write every entry as TSV; `-` or no argument writes stdout.
    Export { file: Option<String> },
    /// Upsert one entry.
    Add {
        #[arg(long)]
        term: String,
        /// Context name, or `*` for every context.
        #[arg(long)]
        context: String,
        #[arg(long)]
        extended_name: String,
        #[arg(long, default_value = "")]
        description: String,
        #[arg(long)]
        notes: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LengthArg {
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    Uniform,
}

impl From<LengthArg> for AbbrevLength {
    fn from(l: LengthArg) -> Self {
        match l {
            LengthArg::Two => AbbrevLength::Fixed(2),
            LengthArg::Three => AbbrevLength::Fixed(3),
            LengthArg::Four => AbbrevLength::Fixed(4),
            LengthArg::Uniform => AbbrevLength::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    Vanilla,
    Rag,
    Golden,
}

impl From<ArmArg> for QuizArm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Vanilla => QuizArm::Vanilla,
            ArmArg::Rag => QuizArm::Rag,
            ArmArg::Golden => QuizArm::Golden,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Abbreviation identification accuracy by abbreviations per question.
    Abbrev {
        /// Generate abbreviations from this word list's first-letter
        /// frequencies instead of using the built-in sample set.
        #[arg(long)]
        word_list: Option<PathBuf>,
        /// Abbreviations to generate from the word list.
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, value_enum, default_value = "uniform")]
        length: LengthArg,
        #[arg(long, default_value_t = 10)]
        per_bucket: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// LLM backend id; repeat for several. `echo` answers every
        /// question perfectly. Defaults to pipeline.llm_backend.
        #[arg(long)]
        backend: Vec<String>,
        /// Count a reply correct when it merely contains every abbreviation.
        #[arg(long)]
        lenient: bool,
        #[arg(long)]
        json: bool,
    },
    /// Multiple-choice quizzes, repeated and averaged.
    Quiz {
        /// Quiz file; repeat for several.
        #[arg(long, required = true)]
        quiz: Vec<PathBuf>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Answering arm; repeat for several. Defaults to all three.
        #[arg(long, value_enum)]
        arm: Vec<ArmArg>,
        /// LLM backend id; repeat for several. Defaults to pipeline.llm_backend.
        #[arg(long)]
        backend: Vec<String>,
        #[arg(long)]
        json: bool,
    },
}

fn config_error(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(ErrorCode::Internal, format!("configuration: {e}"))
}

pub fn load_config(path: Option<&Path>) -> Result<Config, ApiError> {
    let default = Path::new(DEFAULT_CONFIG_FILE);
    let path = path.or_else(|| default.exists().then_some(default));
    Config::load(path).map_err(config_error)
}

fn open_engine(cli: &Cli, extra: Vec<Arc<dyn LlmBackend>>) -> Result<Engine, ApiError> {
    let config = load_config(cli.config.as_deref())?;
    Ok(Engine::open_with_backends(config, extra)?)
}

fn io_error(e: io::Error) -> ApiError {
    ApiError::new(ErrorCode::StoreError, e.to_string())
}

/// Runs the command, writing results to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), ApiError> {
    match &cli.command {
        Command::Serve { bind } => serve(cli, bind.as_deref()),
        Command::Ask(args) => {
            let engine = open_engine(cli, Vec::new())?;
            let response = ops::ask(
                &engine,
                &AskRequest {
                    question: args.question.clone(),
                    context: args.context.clone(),
                    session_id: args.session.clone(),
                    include_trace: args.trace || args.json,
                    plain: args.plain,
                },
            )?;
            if args.json {
                let mut response = response;
                if !args.trace {
                    response.trace = None;
                }
                writeln!(out, "{}", serde_json::to_string_pretty(&response).expect("response serializes"))
            } else {
                print_answer(out, &response, args.trace)
            }
            .map_err(io_error)
        }
        Command::Ingest { path } => {
            let docs = load_documents(path)?;
            let engine = open_engine(cli, Vec::new())?;
            let report = ops::ingest(&engine, &docs)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes")).map_err(io_error)?;
            if report.failed_documents > 0 {
                let mut e = ApiError::new(
                    ErrorCode::ValidationFailed,
                    format!("{} of {} documents failed", report.failed_documents, docs.len()),
                );
                e.retryable = report.documents.iter().any(|d| !d.pending_summaries.is_empty());
                return Err(e);
            }
            Ok(())
        }
        Command::Dict(cmd) => dict(cli, cmd, out),
        Command::Misses { json } => {
            let engine = open_engine(cli, Vec::new())?;
            let listing = ops::miss_reports(&engine);
            if *json {
                writeln!(out, "{}", serde_json::to_string_pretty(&listing).expect("listing serializes"))
            } else {
                listing.tickets.iter().try_for_each(|t| {
                    writeln!(
                        out,
                        "{}\t{}\t{}\t{}",
                        t.ticket_id,
                        t.report.term,
                        t.report.suggested_meaning.as_deref().unwrap_or("-"),
                        t.created_at.to_rfc3339()
                    )
                })
            }
            .map_err(io_error)
        }
        Command::Eval(EvalCommand::Abbrev {
            word_list,
            count,
            length,
            per_bucket,
            seed,
            backend,
            lenient,
            json,
        }) => {
            let abbreviations = match word_list {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(io_error)?;
                    let words: Vec<&str> = text.lines().collect();
                    let dist = build_letter_distribution(&words).map_err(|e| ApiError::invalid(e.to_string()))?;
                    generate_abbreviations(&dist, (*length).into(), *count, *seed)
                        .map_err(|e| ApiError::invalid(e.to_string()))?
                }
                None => SAMPLE_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
            };
            let cases = render_cases(&default_question_templates(), &abbreviations, *per_bucket, *seed)
                .map_err(|e| ApiError::invalid(e.to_string()))?;
            let config = load_config(cli.config.as_deref())?;
            let backends = if backend.is_empty() {
                vec![config.pipeline.llm_backend.clone()]
            } else {
                backend.clone()
            };
            let mut extra: Vec<Arc<dyn LlmBackend>> = Vec::new();
            if backends.iter().any(|b| b == "echo") && !config.llm.contains_key("echo") {
                let templates = match &config.templates {
                    Some(p) => glossa_core::TemplateSet::from_file(p).map_err(config_error)?,
                    None => glossa_core::TemplateSet::default(),
                };
                let echo = echo_backend("echo", &cases, &templates).map_err(config_error)?;
                extra.push(Arc::new(echo));
            }
            let engine = Engine::open_with_backends(config, extra)?;
            let reports = backends
                .iter()
                .map(|b| {
                    let options = AbbrevRunOptions {
                        backend_id: b.clone(),
                        mode: if *lenient { ScoringMode::Lenient } else { ScoringMode::Strict },
                        temperature: engine.config().pipeline.temperature,
                        seed: Some(*seed),
                        ..Default::default()
                    };
                    run_abbrev_experiment(&cases, engine.gateway(), engine.templates(), &options)
                        .map_err(|e| ApiError::invalid(e.to_string()))
                })
                .collect::<Result<Vec<AbbrevReport>, _>>()?;
            if *json {
                writeln!(out, "{}", serde_json::to_string_pretty(&reports).expect("reports serialize"))
            } else {
                let rows: Vec<(&str, &AbbrevReport)> = backends.iter().map(String::as_str).zip(&reports).collect();
                write!(out, "{}", render_abbrev_table(&rows))
            }
            .map_err(io_error)
        }
        Command::Eval(EvalCommand::Quiz {
            quiz,
            trials,
            arm,
            backend,
            json,
        }) => {
            let quizzes = quiz
                .iter()
                .map(|p| load_quiz(p).map_err(|e| ApiError::invalid(format!("{}: {e}", p.display()))))
                .collect::<Result<Vec<_>, _>>()?;
            let engine = open_engine(cli, Vec::new())?;
            let arms: Vec<QuizArm> = if arm.is_empty() {
                vec![QuizArm::Vanilla, QuizArm::Rag, QuizArm::Golden]
            } else {
                arm.iter().map(|&a| a.into()).collect()
            };
            let backends = if backend.is_empty() {
                vec![engine.config().pipeline.llm_backend.clone()]
            } else {
                backend.clone()
            };
            let reports = run_quizzes(&engine, &quizzes, &arms, &backends, *trials)?;
            if *json {
                writeln!(out, "{}", serde_json::to_string_pretty(&reports).expect("reports serialize"))
            } else {
                write!(out, "{}", render_quiz_table(&reports))
            }
            .map_err(io_error)
        }
    }
}

fn run_quizzes(
    engine: &Engine,
    quizzes: &[glossa_core::eval::Quiz],
    arms: &[QuizArm],
    backends: &[String],
    trials: usize,
) -> Result<Vec<QuizReport>, ApiError> {
    let mut reports = Vec::new();
    for &arm in arms {
        for backend in backends {
            let mut config = engine.config().pipeline.clone();
            config.llm_backend = backend.clone();
            engine.with_resources(|resources| {
                let answerer: Box<dyn QuizAnswerer + '_> = match arm {
                    QuizArm::Vanilla => Box::new(VanillaAnswerer {
                        gateway: engine.gateway(),
                        backend_id: backend.clone(),
                        temperature: config.temperature,
                        max_output_tokens: config.max_output_tokens,
                    }),
                    QuizArm::Rag => Box::new(PlainRagAnswerer {
                        resources,
                        config: config.clone(),
                    }),
                    QuizArm::Golden => Box::new(PipelineAnswerer {
                        resources,
                        config: config.clone(),
                    }),
                };
                for quiz in quizzes {
                    let report = run_quiz(quiz, answerer.as_ref(), trials, engine.templates())
                        .map_err(|e| ApiError::invalid(e.to_string()))?;
                    reports.push(report);
                }
                Ok::<_, ApiError>(())
            })?;
        }
    }
    Ok(reports)
}

fn print_answer(out: &mut dyn Write, response: &AskResponse, with_trace: bool) -> io::Result<()> {
    let r = &response.result;
    match r.kind {
        AnswerKind::Answer => writeln!(out, "{}", r.answer_text.as_deref().unwrap_or_default())?,
        AnswerKind::Miss => writeln!(out, "{}", r.miss_message.as_deref().unwrap_or_default())?,
    }
    writeln!(out)?;
    if let Some(c) = &r.context_name {
        writeln!(out, "context: {c}")?;
    }
    if !r.jargon.is_empty() {
        writeln!(out, "jargon: {}", r.jargon.join(", "))?;
    }
    for g in &r.glossary {
        writeln!(out, "glossary: {} = {}", g.term, g.extended_name)?;
    }
    if !r.unresolved_terms.is_empty() {
        writeln!(out, "unresolved: {}", r.unresolved_terms.join(", "))?;
    }
    for c in &r.retrieved {
        writeln!(
            out,
            "source {}: {}#{} ({:.3})",
            c.rank, c.chunk.doc_id, c.chunk.index, c.similarity
        )?;
    }
    writeln!(out, "trace: {}", r.trace_id)?;
    if let (true, Some(trace)) = (with_trace, &response.trace) {
        for (i, step) in trace.steps.iter().enumerate() {
            writeln!(out)?;
            write!(out, "[{}] {}", i + 1, step.step_name.as_str())?;
            if let Some(b) = &step.branch_taken {
                write!(out, " -> {b}")?;
            }
            writeln!(out, ": {}", step.parsed_summary)?;
            if let Some(p) = &step.prompt_text {
                writeln!(out, "  prompt:\n{}", indent(p))?;
            }
            if let Some(raw) = &step.raw_response {
                writeln!(out, "  response:\n{}", indent(raw))?;
            }
        }
    }
    Ok(())
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

fn dict(cli: &Cli, cmd: &DictCommand, out: &mut dyn Write) -> Result<(), ApiError> {
    let engine = open_engine(cli, Vec::new())?;
    let store = engine.dictionary();
    match cmd {
        DictCommand::Import { file } => {
            let reader: Box<dyn Read> = if file == "-" {
                Box::new(io::stdin().lock())
            } else {
                Box::new(BufReader::new(File::open(file).map_err(io_error)?))
            };
            let n = store.import_dictionary(reader)?;
            eprintln!("imported {n} entries");
        }
        DictCommand::Export { file } => {
            let n = match file.as_deref() {
                None | Some("-") => store.export_dictionary(&mut *out)?,
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path).map_err(io_error)?);
                    let n = store.export_dictionary(&mut w)?;
                    w.flush().map_err(io_error)?;
                    n
                }
            };
            eprintln!("exported {n} entries");
        }
        DictCommand::Add {
            term,
            context,
            extended_name,
            description,
            notes,
        } => {
            let mut entry = JargonEntry::new(term, context, extended_name, description);
            if let Some(n) = notes {
                entry = entry.with_notes(n);
            }
            let stored = store.upsert_entry(entry)?;
            writeln!(out, "{}\t{}\t{}", stored.term, stored.context_name, stored.extended_name).map_err(io_error)?;
        }
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    eprintln!("shutting down, finishing in-flight requests");
}

fn serve(cli: &Cli, bind: Option<&str>) -> Result<(), ApiError> {
    let engine = Arc::new(open_engine(cli, Vec::new())?);
    let bind = bind.map(str::to_string).unwrap_or_else(|| engine.config().server.bind.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    runtime
        .block_on(api::serve(engine, &bind, shutdown_signal()))
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("server on {bind}: {e}")))
}
