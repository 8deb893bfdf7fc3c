mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use glossa_cli::api::router;
use glossa_cli::{ApiError, ErrorCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    router: Router,
    _setup: Setup,
}

fn app_with(extra: &str) -> App {
    let setup = Setup::new(extra);
    let engine = setup.engine();
    engine.dictionary().import_path(&core_fixture("dictionary.tsv")).unwrap();
    App {
        router: router(Arc::new(engine)),
        _setup: setup,
    }
}

fn app() -> App {
    app_with("")
}

async fn send(app: &App, method: &str, uri: &str, body: Option<&str>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty)).unwrap();
    let res = app.router.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value: Value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    if !status.is_success() {
        let err: ApiError = serde_json::from_value(value.clone())
            .unwrap_or_else(|e| panic!("non-2xx body is not an ApiError ({e}): {value}"));
        assert!(ErrorCode::ALL.contains(&err.code));
        assert_eq!(err.code.http_status(), status.as_u16());
    }
    (status, value)
}

async fn call(app: &App, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map(|b| b.to_string());
    send(app, method, uri, body.as_deref(), None).await
}

async fn ingest_fixture(app: &App) {
    let (status, report) = call(app, "POST", "/ingest", Some(documents_json())).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["failed_documents"], 0);
    assert_eq!(report["total_index_entries"], 4);
}

#[tokio::test]
async fn ask_resolves_jargon_and_links_a_trace() {
    let app = app();
    ingest_fixture(&app).await;
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": PUC_QUESTION }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["kind"], "answer");
    assert_eq!(body["context_name"], "nand-design");
    assert_eq!(body["glossary"][0]["extended_name"], "Peripheral Under Cell");
    assert!(body["retrieved"].as_array().unwrap().iter().all(|c| c["similarity"].is_number()));
    assert!(body.get("trace").is_none());

    let id = body["trace_id"].as_str().unwrap();
    let (status, trace) = call(&app, "GET", &format!("/trace/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let steps: Vec<&str> = trace["steps"].as_array().unwrap().iter().map(|s| s["step_name"].as_str().unwrap()).collect();
    assert_eq!(
        steps,
        [
            "identify_jargon",
            "identify_context",
            "query_jargon",
            "augment_question",
            "retrieve",
            "generate_answer"
        ]
    );

    let (_, with_trace) = call(&app, "POST", "/ask", Some(json!({ "question": PUC_QUESTION, "include_trace": true }))).await;
    assert_eq!(with_trace["trace"]["question_id"], with_trace["trace_id"]);
}

#[tokio::test]
async fn empty_and_malformed_bodies_are_rejected() {
    let app = app();
    let (status, body) = send(&app, "POST", "/ask", None, None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "empty_question");
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": "   " }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("empty_question")));
    let (status, body) = send(&app, "POST", "/ask", Some("{not json"), None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": "x", "bogus": 1 }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": PUC_QUESTION, "context": "astrology" }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
}

#[tokio::test]
async fn unknown_term_gets_a_miss_and_can_be_reported() {
    let app = app();
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": "How do I tune QZXV?" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["kind"], "miss");
    assert_eq!(body["unresolved_terms"], json!(["QZXV"]));
    let msg = body["miss_message"].as_str().unwrap();
    assert!(msg.contains("QZXV") && msg.contains("unable to answer"));
    assert!(body["retrieved"].as_array().unwrap().is_empty());

    let report = json!({ "term": "QZXV", "suggested_meaning": "Quad Zone Voltage", "trace_id": body["trace_id"] });
    let (status, first) = call(&app, "POST", "/miss-report", Some(report.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, second) = call(&app, "POST", "/miss-report", Some(report)).await;
    assert_ne!(first["ticket_id"], second["ticket_id"]);
    let (_, no_meaning) = call(&app, "POST", "/miss-report", Some(json!({ "term": "QZXV" }))).await;
    assert!(no_meaning["ticket_id"].is_string());
    let (status, body) = call(&app, "POST", "/miss-report", Some(json!({ "term": " " }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_failed")));

    let (_, listing) = call(&app, "GET", "/miss-report", None).await;
    let tickets = listing["tickets"].as_array().unwrap();
    assert_eq!(tickets.len(), 3);
    assert_eq!(tickets[0]["ticket_id"], first["ticket_id"]);
    assert_eq!(tickets[0]["suggested_meaning"], "Quad Zone Voltage");
}

#[tokio::test]
async fn dictionary_writes_are_visible_to_the_next_question() {
    let app = app();
    let entry = json!({
        "term": "QZXV",
        "context_name": "nand-design",
        "extended_name": "Quad Zone Verify",
        "description": "A verify pass over four zones."
    });
    let (status, stored) = call(&app, "POST", "/dictionary", Some(entry)).await;
    assert_eq!(status, StatusCode::OK, "{stored}");
    let (_, body) = call(&app, "POST", "/ask", Some(json!({ "question": "How do I tune QZXV?" }))).await;
    assert_eq!(body["kind"], "answer");
    assert_eq!(body["glossary"][0]["extended_name"], "Quad Zone Verify");

    let (_, listing) = call(&app, "GET", "/dictionary?term=qzxv", None).await;
    assert_eq!(listing["entries"].as_array().unwrap().len(), 1);
    let (_, listing) = call(&app, "GET", "/dictionary?context=genetics", None).await;
    assert!(listing["entries"].as_array().unwrap().iter().all(|e| e["context_name"] == "genetics"));

    let batch = json!({ "entries": [
        { "term": "WL", "context_name": "nand-design", "extended_name": "Word Line" },
        { "term": "BL", "context_name": "nand-design", "extended_name": "Bit Line" }
    ]});
    let (status, stored) = call(&app, "POST", "/dictionary", Some(batch)).await;
    assert_eq!((status, stored["entries"].as_array().unwrap().len()), (StatusCode::OK, 2));

    let (status, _) = call(&app, "DELETE", "/dictionary?term=QZXV&context=nand-design", None).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "DELETE", "/dictionary?term=QZXV&context=nand-design", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, body) = call(&app, "DELETE", "/dictionary?term=QZXV", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
    let bad = json!({ "term": "", "context_name": "nand-design", "extended_name": "x" });
    let (status, body) = call(&app, "POST", "/dictionary", Some(bad)).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_failed")));
}

#[tokio::test]
async fn contexts_can_be_listed_and_replaced() {
    let app = app();
    let (status, body) = call(&app, "GET", "/contexts", None).await;
    assert_eq!(status, StatusCode::OK);
    let names: Vec<&str> = body["contexts"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"nand-design") && names.contains(&"genetics"));

    let replacement = json!({ "contexts": [
        { "name": "nand-design", "description": "NAND flash circuit and architecture design" },
        { "name": "general", "description": "Anything else" }
    ]});
    let (status, body) = call(&app, "PUT", "/contexts", Some(replacement)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["contexts"].as_array().unwrap().len(), 2);
    let (_, body) = call(&app, "GET", "/contexts", None).await;
    assert_eq!(body["contexts"].as_array().unwrap().len(), 2);

    let (status, body) = call(&app, "PUT", "/contexts", Some(json!({ "contexts": [] }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("validation_failed")));
    let dup = json!({ "contexts": [
        { "name": "a", "description": "x" },
        { "name": "A", "description": "y" }
    ]});
    let (status, _) = call(&app, "PUT", "/contexts", Some(dup)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn unknown_trace_routes_and_methods_have_codes() {
    let app = app();
    let (status, body) = call(&app, "GET", "/trace/q-nope", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, body) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (status, body) = call(&app, "GET", "/ask", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::METHOD_NOT_ALLOWED, Some("method_not_allowed")));
    let (status, body) = call(&app, "POST", "/ingest", Some(json!({ "documents": [] }))).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));
}

#[tokio::test]
async fn unparseable_model_output_is_a_parse_failure_with_trace() {
    let app = app();
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": "Why does GARBLE happen?" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "parse_failure");
    let id = body["trace_id"].as_str().expect("failed runs keep a trace");
    let (status, trace) = call(&app, "GET", &format!("/trace/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["steps"][0]["step_name"], "identify_jargon");
}

#[tokio::test]
async fn unreachable_backend_is_retryable_503() {
    let setup = Setup::new(
        r#"
[llm.down]
kind = "openai"
endpoint = "http://127.0.0.1:9/v1"
model = "m"
timeout_secs = 2
"#,
    );
    let mut config = glossa_core::Config::load(Some(&setup.config_path())).unwrap();
    config.pipeline.llm_backend = "down".into();
    let app = App {
        router: router(Arc::new(glossa_core::Engine::open(config).unwrap())),
        _setup: setup,
    };
    let (status, body) = call(&app, "POST", "/ask", Some(json!({ "question": PUC_QUESTION }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["code"], "backend_unreachable");
    assert_eq!(body["retryable"], true);
    assert!(body["trace_id"].is_string());
}

#[tokio::test]
async fn bearer_token_guards_everything_but_health() {
    let app = app_with("[server]\nauth_token = \"s3cret\"\n");
    let (status, body) = call(&app, "GET", "/contexts", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthorized")));
    let (status, _) = send(&app, "GET", "/contexts", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = send(&app, "GET", "/contexts", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
    let (status, health) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    assert_eq!(health["backends"]["llm"], json!(["mock"]));
}

#[tokio::test]
async fn concurrent_asks_each_get_their_own_trace() {
    let app = Arc::new(app());
    ingest_fixture(&app).await;
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let q = if i % 2 == 0 { PUC_QUESTION.to_string() } else { format!("How do I tune QZXV {i}?") };
            call(&app, "POST", "/ask", Some(json!({ "question": q }))).await
        }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for (i, h) in handles.into_iter().enumerate() {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(body["kind"], if i % 2 == 0 { "answer" } else { "miss" });
        ids.insert(body["trace_id"].as_str().unwrap().to_string());
    }
    assert_eq!(ids.len(), 8);
}
