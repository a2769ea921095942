//! REST service over the [`Workbench`]. All routes live under `/api`.
//!
//! Every non-2xx reply has an [`ApiError`] body. Mutating requests that
//! carry an `Idempotency-Key` header are executed once per key and the
//! stored response is replayed on retry.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::app::{HumanLabel, RunRequest, Workbench, WorkbenchError};
use crate::deid::ReviewDecision;
use crate::model::{CodingSchema, LabelSource, SourceFormat};
use crate::store::{Access, Collection, Filter, Page, MAX_PAGE};

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub http_status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self { http_status: status, code: code.into(), message: message.into(), details: None }
    }
}

impl From<WorkbenchError> for ApiError {
    fn from(e: WorkbenchError) -> Self {
        Self { http_status: e.http_status(), code: e.code().into(), message: e.to_string(), details: e.details() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(400, "invalid_json", e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(400, "invalid_query", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

#[derive(Clone)]
struct Cached {
    fingerprint: String,
    status: StatusCode,
    content_type: Option<HeaderValue>,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Cached>>>;

#[derive(Clone)]
pub struct AppState {
    wb: Arc<Workbench>,
    api_token: Option<String>,
    privileged: Option<(String, String)>,
    idempotency: Arc<Mutex<HashMap<String, Slot>>>,
}

impl AppState {
    pub fn new(wb: Arc<Workbench>) -> Self {
        let server = &wb.config().server;
        let api_token = server.api_token.clone();
        let privileged =
            server.privileged_token.clone().map(|t| (server.privileged_header.to_ascii_lowercase(), t));
        Self { wb, api_token, privileged, idempotency: Arc::new(Mutex::new(HashMap::new())) }
    }

    fn access(&self, headers: &HeaderMap) -> Access {
        match &self.privileged {
            Some((name, token)) if headers.get(name).and_then(|v| v.to_str().ok()) == Some(token.as_str()) => {
                Access::Privileged
            }
            _ => Access::Standard,
        }
    }
}

/// Runs blocking workbench code off the async executor.
async fn blocking<T, F>(st: &AppState, status: StatusCode, f: F) -> ApiResult
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Workbench) -> Result<T, WorkbenchError> + Send + 'static,
{
    let wb = st.wb.clone();
    let out = tokio::task::spawn_blocking(move || f(&wb))
        .await
        .map_err(|e| ApiError::new(500, "internal", format!("worker failed: {e}")))??;
    Ok((status, Json(out)).into_response())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(400, "invalid_json", e.to_string()))
}

// ---------------------------------------------------------------------------
// Middleware
// ---------------------------------------------------------------------------

async fn auth(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.api_token {
        let exempt = req.uri().path() == "/api/healthz";
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !exempt && !ok {
            return ApiError::new(401, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn idempotency(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let key = req.headers().get(IDEMPOTENCY_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned);
    let (Some(key), true) = (key, req.method() == Method::POST) else {
        return next.run(req).await;
    };
    let (parts, body) = req.into_parts();
    let bytes = match axum::body::to_bytes(body, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(413, "body_too_large", e.to_string()).into_response(),
    };
    let scope = format!("{} {}|{key}", parts.method, parts.uri.path());
    let fingerprint = hex::encode(Sha256::new().chain_update(parts.uri.to_string()).chain_update(&bytes).finalize());
    let slot = st.idempotency.lock().expect("idempotency lock").entry(scope).or_default().clone();
    let mut guard = slot.lock().await;
    if let Some(c) = guard.as_ref() {
        if c.fingerprint != fingerprint {
            return ApiError::new(422, "idempotency_key_reused", "the key was already used with a different request")
                .into_response();
        }
        return replay(c);
    }
    let response = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    let (rparts, rbody) = response.into_parts();
    let body = match axum::body::to_bytes(rbody, BODY_LIMIT).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(500, "internal", e.to_string()).into_response(),
    };
    let cached = Cached {
        fingerprint,
        status: rparts.status,
        content_type: rparts.headers.get(header::CONTENT_TYPE).cloned(),
        body,
    };
    let out = replay(&cached);
    if !cached.status.is_server_error() {
        *guard = Some(cached);
    }
    out
}

fn replay(c: &Cached) -> Response {
    let mut r = Response::new(Body::from(c.body.clone()));
    *r.status_mut() = c.status;
    if let Some(ct) = &c.content_type {
        r.headers_mut().insert(header::CONTENT_TYPE, ct.clone());
    }
    r
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

type Params = Result<Query<Vec<(String, String)>>, QueryRejection>;

fn param<'a>(q: &'a [(String, String)], name: &str) -> Option<&'a str> {
    q.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

/// `limit`/`offset` paging plus equality filters from every other param.
fn list_params(q: &[(String, String)]) -> Result<(Filter, Page), ApiError> {
    let mut filter = Filter::new();
    let mut page = Page::default();
    for (k, v) in q {
        match k.as_str() {
            "limit" => {
                page.limit = v.parse().map_err(|_| ApiError::new(400, "invalid_query", "limit must be an integer"))?;
                if page.limit > MAX_PAGE {
                    return Err(ApiError::new(400, "invalid_query", format!("limit must be at most {MAX_PAGE}")));
                }
            }
            "offset" => page.offset = v.parse().map_err(|_| ApiError::new(400, "invalid_query", "offset must be an integer"))?,
            _ => filter = filter.eq(k.clone(), v.clone()),
        }
    }
    Ok((filter, page))
}

async fn list(st: AppState, c: Collection, q: Params) -> ApiResult {
    let Query(q) = q?;
    let (filter, page) = list_params(&q)?;
    blocking(&st, StatusCode::OK, move |wb| wb.list(c, &filter, page)).await
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn import_session(State(st): State<AppState>, q: Params, body: Bytes) -> ApiResult {
    let Query(q) = q?;
    let format: SourceFormat = param(&q, "format")
        .ok_or_else(|| ApiError::new(400, "invalid_query", "the `format` parameter is required"))?
        .parse()
        .map_err(|e: String| ApiError::new(400, "invalid_query", e))?;
    let title = param(&q, "title").unwrap_or("untitled").to_owned();
    blocking(&st, StatusCode::CREATED, move |wb| wb.import(&body, format, &title)).await
}

async fn list_sessions(State(st): State<AppState>, q: Params) -> ApiResult {
    list(st, Collection::Sessions, q).await
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.session(&id)).await
}

async fn export_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let wb = st.wb.clone();
    let bytes = tokio::task::spawn_blocking(move || wb.export_session(&id))
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct DeidentifyBody {
    #[serde(default)]
    roster: Vec<String>,
}

async fn deidentify(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let b: DeidentifyBody = if body.is_empty() { DeidentifyBody::default() } else { parse_body(&body)? };
    blocking(&st, StatusCode::OK, move |wb| wb.deidentify(&id, b.roster)).await
}

async fn deid_report(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.deid_report(&id)).await
}

async fn deid_verify(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let d: ReviewDecision = parse_body(&body)?;
    blocking(&st, StatusCode::OK, move |wb| wb.deid_review(&id, &d)).await
}

async fn mask_map(State(st): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> ApiResult {
    let access = st.access(&headers);
    blocking(&st, StatusCode::OK, move |wb| wb.mask_map(&id, access)).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewPrompt {
    name: String,
    instructions: String,
    schema: CodingSchema,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewVersion {
    instructions: String,
    schema: CodingSchema,
}

async fn create_prompt(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let p: NewPrompt = parse_body(&body)?;
    blocking(&st, StatusCode::CREATED, move |wb| wb.create_prompt(&p.name, &p.instructions, p.schema)).await
}

async fn add_version(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let v: NewVersion = parse_body(&body)?;
    blocking(&st, StatusCode::CREATED, move |wb| wb.add_prompt_version(&id, &v.instructions, v.schema)).await
}

async fn list_prompts(State(st): State<AppState>, q: Params) -> ApiResult {
    list(st, Collection::Prompts, q).await
}

async fn get_prompt(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.prompt(&id)).await
}

async fn create_run(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let req: RunRequest = parse_body(&body)?;
    let wb = st.wb.clone();
    let run = tokio::task::spawn_blocking(move || wb.create_run(&req))
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))??;
    st.wb.spawn_run(run.id.as_str());
    Ok((StatusCode::ACCEPTED, Json(run)).into_response())
}

async fn list_runs(State(st): State<AppState>, q: Params) -> ApiResult {
    list(st, Collection::Runs, q).await
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.run(&id)).await
}

async fn cancel_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.cancel_run(&id)).await
}

fn parse_sources(q: &[(String, String)]) -> Result<Vec<LabelSource>, ApiError> {
    q.iter()
        .filter(|(k, _)| k == "source")
        .flat_map(|(_, v)| v.split(','))
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: String| ApiError::new(400, "invalid_query", e)))
        .collect()
}

async fn chat_view(State(st): State<AppState>, Path(id): Path<String>, q: Params) -> ApiResult {
    let Query(q) = q?;
    let sources = parse_sources(&q)?;
    blocking(&st, StatusCode::OK, move |wb| wb.chat_view(&id, &sources)).await
}

async fn add_annotation(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let label: HumanLabel = parse_body(&body)?;
    blocking(&st, StatusCode::CREATED, move |wb| wb.add_human_annotation(&label)).await
}

/// Accepts `"run:<id>"` shorthand as well as the tagged object form.
#[derive(Deserialize)]
#[serde(untagged)]
enum SourceInput {
    Text(String),
    Tagged(LabelSource),
}

impl SourceInput {
    fn resolve(self) -> Result<LabelSource, ApiError> {
        match self {
            SourceInput::Tagged(s) => Ok(s),
            SourceInput::Text(t) => t.parse().map_err(|e: String| ApiError::new(422, "invalid_request", e)),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewRunSet {
    name: String,
    members: Vec<SourceInput>,
    #[serde(default)]
    reference: Option<SourceInput>,
    target_field: String,
}

async fn create_runset(State(st): State<AppState>, body: Bytes) -> ApiResult {
    let rs: NewRunSet = parse_body(&body)?;
    let members = rs.members.into_iter().map(SourceInput::resolve).collect::<Result<Vec<_>, _>>()?;
    let reference = rs.reference.map(SourceInput::resolve).transpose()?;
    blocking(&st, StatusCode::CREATED, move |wb| wb.create_runset(&rs.name, members, reference, &rs.target_field)).await
}

async fn get_runset(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.runset(&id)).await
}

async fn evaluation(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult {
    blocking(&st, StatusCode::OK, move |wb| wb.evaluation(&id)).await
}

async fn evaluation_csv(State(st): State<AppState>, Path(id): Path<String>, q: Params) -> ApiResult {
    let Query(q) = q?;
    let matrix = param(&q, "matrix").unwrap_or("kappa").to_owned();
    let wb = st.wb.clone();
    let text = tokio::task::spawn_blocking(move || wb.evaluation_csv(&id, &matrix))
        .await
        .map_err(|e| ApiError::new(500, "internal", e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], text).into_response())
}

async fn models(State(st): State<AppState>) -> ApiResult {
    blocking(&st, StatusCode::OK, |wb| Ok(wb.models())).await
}

async fn not_found() -> ApiError {
    ApiError::new(404, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(405, "method_not_allowed", "method not allowed for this endpoint")
}

pub fn router(wb: Arc<Workbench>) -> Router {
    let st = AppState::new(wb);
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/models", get(models))
        .route("/sessions", get(list_sessions))
        .route("/sessions/import", post(import_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/export", get(export_session))
        .route("/sessions/{id}/deidentify", post(deidentify))
        .route("/sessions/{id}/deid-report", get(deid_report))
        .route("/sessions/{id}/deid-verify", post(deid_verify))
        .route("/sessions/{id}/mask-map", get(mask_map))
        .route("/sessions/{id}/annotations", get(chat_view))
        .route("/prompts", get(list_prompts).post(create_prompt))
        .route("/prompts/{id}", get(get_prompt))
        .route("/prompts/{id}/versions", post(add_version))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/cancel", post(cancel_run))
        .route("/annotations", post(add_annotation))
        .route("/runsets", post(create_runset))
        .route("/runsets/{id}", get(get_runset))
        .route("/runsets/{id}/evaluation", get(evaluation))
        .route("/runsets/{id}/evaluation.csv", get(evaluation_csv))
        .method_not_allowed_fallback(method_not_allowed);
    Router::new()
        .nest("/api", api)
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(st.clone(), idempotency))
        .layer(middleware::from_fn_with_state(st.clone(), auth))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(st)
}

/// Binds and serves until Ctrl-C.
pub async fn serve(wb: Arc<Workbench>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(wb))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
