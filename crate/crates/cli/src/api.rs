use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use glossa_core::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ApiError, ErrorCode};
use crate::ops::{self, AskRequest, ContextListing, DictionaryFilter, DictionaryKey, DictionaryUpsert, IngestRequest};

pub const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    auth_token: Option<Arc<str>>,
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a blocking engine call off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, ApiError> + Send + 'static,
{
    let engine = state.engine.clone();
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::new(ErrorCode::Internal, format!("request task failed: {e}"))),
    }
}

fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(ErrorCode::PayloadTooLarge, e.body_text())
        } else {
            ApiError::invalid(e.body_text())
        }
    })?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::invalid(format!("invalid JSON body: {e}")))
}

fn parse_query<T>(query: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    query
        .map(|Query(q)| q)
        .map_err(|e| ApiError::invalid(e.body_text()))
}

async fn ask(State(state): State<AppState>, body: Result<Bytes, BytesRejection>) -> ApiResult<ops::AskResponse> {
    let request: AskRequest = match &body {
        Ok(b) if b.iter().all(u8::is_ascii_whitespace) => AskRequest::default(),
        _ => parse_body(body)?,
    };
    blocking(&state, move |e| ops::ask(e, &request)).await
}

async fn ingest(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<glossa_core::ingest::IngestReport> {
    let request: IngestRequest = parse_body(body)?;
    blocking(&state, move |e| ops::ingest(e, &request.documents)).await
}

async fn list_dictionary(
    State(state): State<AppState>,
    query: Result<Query<DictionaryFilter>, QueryRejection>,
) -> ApiResult<ops::DictionaryListing> {
    let filter = parse_query(query)?;
    blocking(&state, move |e| ops::list_dictionary(e, &filter)).await
}

async fn upsert_dictionary(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<ops::DictionaryListing> {
    let upsert: DictionaryUpsert = parse_body(body)?;
    blocking(&state, move |e| ops::upsert_dictionary(e, upsert.into_entries())).await
}

#[derive(Serialize)]
struct Deleted {
    deleted: bool,
}

async fn delete_dictionary(
    State(state): State<AppState>,
    query: Result<Query<DictionaryKey>, QueryRejection>,
) -> ApiResult<Deleted> {
    let key = parse_query(query)?;
    blocking(&state, move |e| ops::delete_dictionary(e, &key).map(|_| Deleted { deleted: true })).await
}

async fn contexts(State(state): State<AppState>) -> ApiResult<ContextListing> {
    blocking(&state, |e| Ok(ops::contexts(e))).await
}

async fn replace_contexts(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<ContextListing> {
    let listing: ContextListing = parse_body(body)?;
    blocking(&state, move |e| ops::replace_contexts(e, listing)).await
}

async fn trace(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<glossa_core::PipelineTrace> {
    blocking(&state, move |e| ops::trace(e, &id)).await
}

async fn report_miss(
    State(state): State<AppState>,
    body: Result<Bytes, BytesRejection>,
) -> Result<(StatusCode, Json<glossa_core::MissTicket>), ApiError> {
    let report = parse_body(body)?;
    let ticket = blocking(&state, move |e| ops::report_miss(e, report)).await?;
    Ok((StatusCode::CREATED, ticket))
}

async fn miss_reports(State(state): State<AppState>) -> ApiResult<ops::MissListing> {
    blocking(&state, |e| Ok(ops::miss_reports(e))).await
}

async fn healthz(State(state): State<AppState>) -> ApiResult<ops::Health> {
    blocking(&state, ops::health).await
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(ErrorCode::MethodNotAllowed, "method not allowed on this endpoint")
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let Some(token) = state.auth_token.as_deref() else {
        return next.run(request).await;
    };
    if request.uri().path() == "/healthz" {
        return next.run(request).await;
    }
    let presented = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        next.run(request).await
    } else {
        ApiError::new(ErrorCode::Unauthorized, "missing or wrong bearer token").into_response()
    }
}

/// All endpoints. When `server.auth_token` is set, every endpoint except
/// `/healthz` requires `Authorization: Bearer <token>`.
pub fn router(engine: Arc<Engine>) -> Router {
    let auth_token = engine
        .config()
        .server
        .auth_token
        .as_deref()
        .filter(|t| !t.is_empty())
        .map(Arc::from);
    let state = AppState { engine, auth_token };
    Router::new()
        .route("/ask", post(ask))
        .route("/ingest", post(ingest))
        .route(
            "/dictionary",
            get(list_dictionary).post(upsert_dictionary).delete(delete_dictionary),
        )
        .route("/contexts", get(contexts).put(replace_contexts))
        .route("/trace/{id}", get(trace))
        .route("/miss-report", post(report_miss).get(miss_reports))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    engine: Arc<Engine>,
    bind: &str,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(shutdown)
        .await
}
