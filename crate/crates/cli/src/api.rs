//! JSON HTTP API over a [`Store`].
//!
//! Handlers hold no state of their own; every request reads or mutates the
//! store, and all store work runs on the blocking pool.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::middleware::{self, Next};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use corpusforge_core::error::ErrorCode;
use corpusforge_core::store::{export_dataset, ingest_corpus, CorpusFormat, DatasetFormat};
use corpusforge_core::{
    preview_stage, run_project, transition_task, AdapterSet, Error, MetricRegistry, PairStatus, PipelineReport,
    PreviewRow, PreviewStage, ProjectConfig, ProjectRecord, QualityLevel, QualityScore, ReviewTask, StageCounts, Store,
    TaskAction, TaskState,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MAX_PAGE_SIZE: u64 = 500;
const DEFAULT_PAGE_SIZE: u64 = 50;
const MAX_PREVIEW: usize = 1000;
const CORPUS_LIMIT: usize = 256 * 1024 * 1024;

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            details: BTreeMap::new(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        ApiError::new(ErrorCode::Validation, message)
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.code.http_status()).expect("fixed status codes are valid")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError {
            code: e.code(),
            message: e.to_string(),
            details: e.details().unwrap_or_default(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body extractor that reports malformed input as a validation error.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::validation(e.body_text()))?;
        serde_json::from_slice(&bytes)
            .map(JsonBody)
            .map_err(|e| ApiError::validation(format!("malformed JSON body: {e}")))
    }
}

/// Query-string extractor with [`ApiError`] rejections.
pub struct Params<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut axum::http::request::Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(q)| Params(q))
            .map_err(|e| ApiError::validation(e.body_text()))
    }
}

pub struct AppState {
    pub store: Arc<Store>,
    /// Bearer token required on mutating requests, if set.
    pub token: Option<String>,
    /// Config for projects created without one.
    pub default_config: ProjectConfig,
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::State, format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let state: Shared = Arc::new(state);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/projects", post(create_project).get(list_projects))
        .route("/api/projects/{id}", get(get_project))
        .route(
            "/api/projects/{id}/corpus",
            post(upload_corpus).layer(DefaultBodyLimit::max(CORPUS_LIMIT)),
        )
        .route("/api/projects/{id}/run", post(run))
        .route("/api/projects/{id}/report", get(report))
        .route("/api/projects/{id}/preview", get(preview))
        .route("/api/projects/{id}/tasks", get(list_tasks))
        .route("/api/projects/{id}/export", get(export))
        .route("/api/tasks/{id}/claim", post(claim))
        .route("/api/tasks/{id}/release", post(release))
        .route("/api/tasks/{id}/resolve", post(resolve))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/api/{*rest}", any(no_route))
        .method_not_allowed_fallback(no_route)
        .with_state(state);

    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(placeholder)).fallback(no_route),
    }
}

async fn require_token(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        if req.method() != Method::GET && req.method() != Method::HEAD {
            let ok = req
                .headers()
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .is_some_and(|t| t == token);
            if !ok {
                return ApiError::validation("missing or invalid bearer token").into_response();
            }
        }
    }
    next.run(req).await
}

async fn no_route(method: Method, uri: Uri) -> ApiError {
    ApiError::new(ErrorCode::NotFound, format!("no route for {method} {}", uri.path()))
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>corpusforge</title></head>\
         <body><h1>corpusforge</h1><p>The review UI is not installed. \
         Start the service with <code>--static-dir</code> to serve it. \
         The JSON API is under <code>/api</code>.</p></body></html>",
    )
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": VERSION }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum ProjectStatus {
    Empty,
    Ingested,
    Running,
    Completed,
}

#[derive(Serialize)]
struct ProjectSummary {
    project_id: String,
    name: String,
    created_at: String,
    status: ProjectStatus,
    segment_count: u64,
}

#[derive(Serialize)]
struct ProjectView {
    #[serde(flatten)]
    summary: ProjectSummary,
    version: u64,
    config: ProjectConfig,
}

fn summarize(store: &Store, record: &ProjectRecord) -> ProjectSummary {
    let status = if record.last_report.is_some() {
        ProjectStatus::Completed
    } else if store.run_lease(&record.project_id).is_some() {
        ProjectStatus::Running
    } else if record.corpus_ingested {
        ProjectStatus::Ingested
    } else {
        ProjectStatus::Empty
    };
    ProjectSummary {
        project_id: record.project_id.clone(),
        name: record.name.clone(),
        created_at: record.created_at.clone(),
        status,
        segment_count: store.corpus(&record.project_id).map_or(0, |c| c.len() as u64),
    }
}

fn project_view(store: &Store, project_id: &str) -> Result<ProjectView, Error> {
    let entry = store
        .project_entry(project_id)
        .ok_or_else(|| Error::NotFound(format!("project `{project_id}`")))?;
    Ok(ProjectView {
        summary: summarize(store, &entry.value),
        version: entry.version,
        config: entry.value.config,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    project_id: String,
    name: Option<String>,
    config: Option<ProjectConfig>,
}

async fn create_project(
    State(state): State<Shared>,
    JsonBody(body): JsonBody<CreateProject>,
) -> ApiResult<(StatusCode, Json<ProjectView>)> {
    let store = state.store.clone();
    let config = body.config.unwrap_or_else(|| state.default_config.clone());
    let view = blocking(move || {
        let name = body.name.unwrap_or_else(|| body.project_id.clone());
        store.create_project(&body.project_id, &name, config)?;
        project_view(&store, &body.project_id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_projects(State(state): State<Shared>) -> ApiResult<Json<Value>> {
    let store = state.store.clone();
    let projects = blocking(move || {
        Ok(store
            .projects()
            .iter()
            .map(|p| summarize(&store, p))
            .collect::<Vec<_>>())
    })
    .await?;
    Ok(Json(json!({ "projects": projects })))
}

async fn get_project(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<ProjectView>> {
    let store = state.store.clone();
    Ok(Json(blocking(move || project_view(&store, &id)).await?))
}

async fn upload_corpus(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase());
    let format = match content_type.as_deref() {
        Some("text/plain") => CorpusFormat::Txt,
        Some("application/x-ndjson") => CorpusFormat::Jsonl,
        other => {
            return Err(ApiError::validation(format!(
                "unsupported content type {}; use text/plain or application/x-ndjson",
                other.unwrap_or("(none)")
            )))
        }
    };
    let store = state.store.clone();
    let pid = id.clone();
    let ingested = blocking(move || ingest_corpus(&store, &pid, &body, format)).await?;
    Ok(Json(json!({ "project_id": id, "ingested": ingested })))
}

async fn run(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<PipelineReport>> {
    let store = state.store.clone();
    Ok(Json(blocking(move || run_project(&store, &id)).await?))
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum ReportView {
    Running {
        stage: String,
        started_at: String,
        progress: StageCounts,
    },
    Completed {
        report: PipelineReport,
    },
}

async fn report(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<ReportView>> {
    let store = state.store.clone();
    let view = blocking(move || {
        let project = store.require_project(&id)?;
        if let Some(report) = project.last_report {
            return Ok(ReportView::Completed { report });
        }
        match store.run_lease(&id) {
            Some(lease) => Ok(ReportView::Running {
                stage: lease.stage,
                started_at: lease.started_at,
                progress: lease.progress,
            }),
            None => Err(Error::NotFound(format!(
                "project `{id}` has no report yet; run the pipeline first"
            ))),
        }
    })
    .await?;
    Ok(Json(view))
}

#[derive(Deserialize)]
struct PreviewQuery {
    stage: Option<String>,
    n: Option<usize>,
}

#[derive(Serialize)]
struct PreviewView {
    stage: PreviewStage,
    rows: Vec<PreviewRow>,
}

async fn preview(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Params(q): Params<PreviewQuery>,
) -> ApiResult<Json<PreviewView>> {
    let stage: PreviewStage = q
        .stage
        .as_deref()
        .ok_or_else(|| ApiError::validation("query parameter `stage` is required"))?
        .parse()?;
    let n = q.n.unwrap_or(5);
    if n > MAX_PREVIEW {
        return Err(ApiError::validation(format!("n must be at most {MAX_PREVIEW}")));
    }
    let store = state.store.clone();
    let rows = blocking(move || {
        let project = store.require_project(&id)?;
        let adapters = AdapterSet::from_config(&project.config)?;
        preview_stage(&store, &id, stage, n, &adapters)
    })
    .await?;
    Ok(Json(PreviewView { stage, rows }))
}

#[derive(Serialize)]
struct TaskView {
    #[serde(flatten)]
    task: ReviewTask,
    source: String,
    target: String,
    raw_target: String,
    score: Option<QualityScore>,
    pair_status: PairStatus,
}

fn task_view(store: &Store, task: ReviewTask) -> Result<TaskView, Error> {
    let pair = store
        .pair(&task.project_id, &task.pair_id)
        .ok_or_else(|| Error::NotFound(format!("pair `{}`", task.pair_id)))?;
    Ok(TaskView {
        task,
        source: pair.source,
        target: pair.target,
        raw_target: pair.raw_target,
        score: pair.score,
        pair_status: pair.status,
    })
}

#[derive(Deserialize)]
struct TasksQuery {
    level: Option<String>,
    state: Option<String>,
    page: Option<u64>,
    page_size: Option<u64>,
}

#[derive(Serialize)]
struct TaskPage {
    project_id: String,
    page: u64,
    page_size: u64,
    total: u64,
    tasks: Vec<TaskView>,
}

async fn list_tasks(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Params(q): Params<TasksQuery>,
) -> ApiResult<Json<TaskPage>> {
    let level = q.level.as_deref().map(QualityLevel::from_str).transpose()?;
    let task_state = q.state.as_deref().map(TaskState::from_str).transpose()?;
    let page = q.page.unwrap_or(1);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 {
        return Err(ApiError::validation("page starts at 1"));
    }
    if !(1..=MAX_PAGE_SIZE).contains(&page_size) {
        return Err(ApiError::validation(format!(
            "page_size must be between 1 and {MAX_PAGE_SIZE}"
        )));
    }
    let store = state.store.clone();
    let page_view = blocking(move || {
        store.require_project(&id)?;
        let matching: Vec<ReviewTask> = store
            .tasks(&id)
            .into_iter()
            .filter(|t| level.is_none_or(|l| t.level == l) && task_state.is_none_or(|s| t.state == s))
            .collect();
        let total = matching.len() as u64;
        let skip = (page - 1).saturating_mul(page_size);
        let tasks = matching
            .into_iter()
            .skip(usize::try_from(skip).unwrap_or(usize::MAX))
            .take(page_size as usize)
            .map(|t| task_view(&store, t))
            .collect::<Result<_, _>>()?;
        Ok(TaskPage {
            project_id: id,
            page,
            page_size,
            total,
            tasks,
        })
    })
    .await?;
    Ok(Json(page_view))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimBody {
    expected_version: u64,
    assignee: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReleaseBody {
    expected_version: u64,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Resolution {
    Accept,
    Edit,
    Reject,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolveBody {
    action: Resolution,
    edited_target: Option<String>,
    expected_version: u64,
}

async fn apply_action(
    state: Shared,
    task_id: String,
    action: TaskAction,
    expected_version: u64,
) -> ApiResult<Json<TaskView>> {
    let store = state.store.clone();
    let view = blocking(move || {
        let task = store
            .task(&task_id)
            .ok_or_else(|| Error::NotFound(format!("task `{task_id}`")))?;
        let registry = match action {
            TaskAction::Edit { .. } => {
                let project = store.require_project(&task.project_id)?;
                MetricRegistry::from_adapters(&AdapterSet::from_config(&project.config)?)?
            }
            _ => MetricRegistry::heuristic(),
        };
        let updated = transition_task(&store, &registry, &task_id, action, expected_version)?;
        task_view(&store, updated)
    })
    .await?;
    Ok(Json(view))
}

async fn claim(
    State(state): State<Shared>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ClaimBody>,
) -> ApiResult<Json<TaskView>> {
    apply_action(
        state,
        id,
        TaskAction::Claim {
            assignee: body.assignee,
        },
        body.expected_version,
    )
    .await
}

async fn release(
    State(state): State<Shared>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ReleaseBody>,
) -> ApiResult<Json<TaskView>> {
    apply_action(state, id, TaskAction::Release, body.expected_version).await
}

async fn resolve(
    State(state): State<Shared>,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<ResolveBody>,
) -> ApiResult<Json<TaskView>> {
    let action = match (body.action, body.edited_target) {
        (Resolution::Edit, Some(new_target)) => TaskAction::Edit { new_target },
        (Resolution::Edit, None) => return Err(ApiError::validation("action `edit` requires edited_target")),
        (_, Some(_)) => return Err(ApiError::validation("edited_target is only allowed with action `edit`")),
        (Resolution::Accept, None) => TaskAction::Accept,
        (Resolution::Reject, None) => TaskAction::Reject,
    };
    apply_action(state, id, action, body.expected_version).await
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
    include: Option<String>,
}

/// Parses a comma-separated list of pair statuses.
pub fn parse_statuses(list: &str) -> Result<BTreeSet<PairStatus>, Error> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(PairStatus::from_str)
        .collect()
}

async fn export(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Params(q): Params<ExportQuery>,
) -> ApiResult<Response> {
    let format: DatasetFormat = q.format.as_deref().unwrap_or("jsonl").parse()?;
    let include = match q.include.as_deref() {
        Some(list) => parse_statuses(list)?,
        None => corpusforge_core::store::default_export_statuses(),
    };
    let store = state.store.clone();
    let body = blocking(move || export_dataset(&store, &id, format, &include)).await?;
    let content_type = format!("{}; charset=utf-8", format.content_type());
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}
