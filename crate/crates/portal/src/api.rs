//! HTTP/JSON routes for publish (`POST /records`), find (`GET /search`) and
//! bind (`GET /records/{id}/access`), plus harvest jobs and health.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use sdi_core::metadata::{from_canonical, to_canonical, validate_record, AccessEndpoint, CanonicalError};
use sdi_core::search::{search_envelope, SearchConfig};
use sdi_core::{MetadataProfile, SearchQuery, Thesaurus, UpsertOutcome};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;
use url::Url;

use crate::harvester::{harvest_observed, HarvestError, HarvestJob, HarvestReport, LOCK_FILE};
use crate::SharedStore;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedRequest,
    ValidationFailed,
    NotFound,
    HarvestInProgress,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::MalformedRequest => StatusCode::BAD_REQUEST,
            ErrorCode::ValidationFailed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::HarvestInProgress => StatusCode::CONFLICT,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            status: code.status().as_u16(),
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    fn malformed(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::MalformedRequest, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), json_body(serde_json::to_string(&self).expect("errors serialize"))).into_response()
    }
}

fn json_body(body: String) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], body)
}

fn json_response(status: StatusCode, value: &impl Serialize) -> Response {
    (status, json_body(serde_json::to_string(value).expect("responses serialize"))).into_response()
}

/// Fetch settings applied to harvests started over HTTP.
#[derive(Debug, Clone)]
pub struct HarvestSettings {
    pub max_concurrent_fetches: usize,
    pub per_host_delay: Duration,
    pub timeout: Duration,
}

impl Default for HarvestSettings {
    fn default() -> Self {
        let j = HarvestJob::new(Vec::new(), "");
        HarvestSettings {
            max_concurrent_fetches: j.max_concurrent_fetches,
            per_host_delay: j.per_host_delay,
            timeout: j.timeout,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running { completed: usize, total: usize },
    Done { report: HarvestReport },
    Failed { message: String },
}

#[derive(Default)]
struct Jobs {
    next: u64,
    active: Option<String>,
    states: BTreeMap<String, JobState>,
}

#[derive(Clone)]
pub struct AppState {
    store: SharedStore,
    profile: Arc<MetadataProfile>,
    thesaurus: Arc<Thesaurus>,
    thesaurus_loaded: bool,
    search: Arc<SearchConfig>,
    harvest: HarvestSettings,
    jobs: Arc<Mutex<Jobs>>,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: SharedStore) -> Self {
        AppState {
            store,
            profile: Arc::new(MetadataProfile::sdi_basic()),
            thesaurus: Arc::new(Thesaurus::default()),
            thesaurus_loaded: false,
            search: Arc::new(SearchConfig::default()),
            harvest: HarvestSettings::default(),
            jobs: Arc::default(),
            ui_dir: None,
        }
    }

    pub fn with_profile(mut self, profile: MetadataProfile) -> Self {
        self.profile = Arc::new(profile);
        self
    }

    pub fn with_thesaurus(mut self, thesaurus: Thesaurus) -> Self {
        self.thesaurus = Arc::new(thesaurus);
        self.thesaurus_loaded = true;
        self
    }

    pub fn with_harvest_settings(mut self, settings: HarvestSettings) -> Self {
        self.harvest = settings;
        self
    }

    /// Serve static files from `dir` under `/ui/`.
    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> &SharedStore {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    let mut app = Router::new()
        .route("/records", post(publish))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/access", get(get_access))
        .route("/search", get(search))
        .route("/harvest", post(start_harvest))
        .route("/harvest/{job_id}", get(harvest_status))
        .route("/health", get(health));
    if let Some(dir) = &state.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.fallback(no_route).method_not_allowed_fallback(no_route).with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn no_route(method: Method, uri: Uri) -> ApiError {
    ApiError::not_found(format!("no route for {method} {}", uri.path()))
}

async fn publish(State(st): State<AppState>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let body = body.map_err(|e| ApiError::malformed(e.body_text()))?;
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::malformed(format!("body is not UTF-8: {e}")))?;
    let decoded = from_canonical(text).map_err(|e| {
        let details = match &e {
            CanonicalError::Parse { line, column, .. } => json!({"line": line, "column": column}),
            CanonicalError::Schema { field, .. } => json!({"field": field}),
        };
        ApiError::malformed(e.to_string()).with_details(details)
    })?;
    let report = validate_record(&decoded.record, &st.profile);
    if !report.valid {
        return Err(ApiError::new(ErrorCode::ValidationFailed, "record does not satisfy the metadata profile")
            .with_details(serde_json::to_value(&report).expect("reports serialize")));
    }
    let id = decoded.record.id.clone();
    let outcome = st
        .store
        .write()
        .expect("store lock poisoned")
        .upsert(decoded.record)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let status = match outcome {
        UpsertOutcome::Added => StatusCode::CREATED,
        UpsertOutcome::Updated => StatusCode::OK,
    };
    let mut body = json!({"id": id});
    if !decoded.warnings.is_empty() {
        body["warnings"] = json!(decoded.warnings);
    }
    Ok(json_response(status, &body))
}

async fn get_record(State(st): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let store = st.store.read().expect("store lock poisoned");
    let rec = store
        .catalog()
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no record with id {id:?}")))?;
    Ok(json_body(to_canonical(rec)))
}

#[derive(Serialize)]
struct Access<'a> {
    endpoints: &'a [AccessEndpoint],
}

async fn get_access(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let store = st.store.read().expect("store lock poisoned");
    let rec = store
        .catalog()
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no record with id {id:?}")))?;
    Ok(json_response(
        StatusCode::OK,
        &Access {
            endpoints: &rec.access_endpoints,
        },
    ))
}

async fn search(State(st): State<AppState>, RawQuery(raw): RawQuery) -> Result<impl IntoResponse, ApiError> {
    let raw = raw.unwrap_or_default();
    let pairs: Vec<(String, String)> = url::form_urlencoded::parse(raw.as_bytes()).into_owned().collect();
    let query = SearchQuery::from_params(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .map_err(|e| ApiError::malformed(e.to_string()))?;
    let store = st.store.read().expect("store lock poisoned");
    let env = search_envelope(store.catalog(), &query, &st.thesaurus, &st.search)
        .map_err(|e| ApiError::malformed(e.to_string()))?;
    Ok(json_body(env.to_json()))
}

#[derive(Deserialize)]
struct HarvestRequest {
    seed_urls: Vec<String>,
    #[serde(default)]
    publisher_label: String,
}

async fn start_harvest(State(st): State<AppState>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let body = body.map_err(|e| ApiError::malformed(e.body_text()))?;
    let req: HarvestRequest = serde_json::from_slice(&body).map_err(|e| ApiError::malformed(e.to_string()))?;
    if req.seed_urls.is_empty() {
        return Err(ApiError::malformed("seed_urls must not be empty"));
    }
    let seeds = req
        .seed_urls
        .iter()
        .map(|s| Url::parse(s).map_err(|e| ApiError::malformed(format!("seed {s:?}: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let job = HarvestJob {
        seed_urls: seeds,
        max_concurrent_fetches: st.harvest.max_concurrent_fetches,
        per_host_delay: st.harvest.per_host_delay,
        timeout: st.harvest.timeout,
        publisher_label: req.publisher_label,
    };
    job.validate()?;
    let lock = st.store.read().expect("store lock poisoned").dir().map(|d| d.join(LOCK_FILE));
    if let Some(lock) = lock.filter(|l| l.exists()) {
        return Err(ApiError::new(
            ErrorCode::HarvestInProgress,
            format!("{} exists; another process is harvesting into this catalog", lock.display()),
        ));
    }

    let job_id = {
        let mut jobs = st.jobs.lock().expect("job table poisoned");
        if let Some(active) = &jobs.active {
            return Err(ApiError::new(ErrorCode::HarvestInProgress, format!("harvest {active} is still running"))
                .with_details(json!({"job_id": active})));
        }
        jobs.next += 1;
        let id = format!("h{}", jobs.next);
        jobs.active = Some(id.clone());
        jobs.states.insert(id.clone(), JobState::Pending);
        id
    };

    let (jobs, store, id) = (st.jobs.clone(), st.store.clone(), job_id.clone());
    tokio::spawn(async move {
        let set = |state: JobState| {
            jobs.lock().expect("job table poisoned").states.insert(id.clone(), state);
        };
        set(JobState::Running {
            completed: 0,
            total: job.seed_urls.len(),
        });
        let result = harvest_observed(&store, &job, |completed, total| set(JobState::Running { completed, total })).await;
        set(match result {
            Ok(report) => JobState::Done { report },
            Err(e) => JobState::Failed { message: e.to_string() },
        });
        jobs.lock().expect("job table poisoned").active = None;
    });
    Ok(json_response(StatusCode::ACCEPTED, &json!({"job_id": job_id})))
}

async fn harvest_status(State(st): State<AppState>, Path(job_id): Path<String>) -> Result<Response, ApiError> {
    let jobs = st.jobs.lock().expect("job table poisoned");
    let state = jobs
        .states
        .get(&job_id)
        .ok_or_else(|| ApiError::not_found(format!("no harvest job {job_id:?}")))?;
    let mut body = serde_json::to_value(state).expect("job states serialize");
    body["job_id"] = json!(job_id);
    Ok(json_response(StatusCode::OK, &body))
}

async fn health(State(st): State<AppState>) -> Response {
    let store = st.store.read().expect("store lock poisoned");
    json_response(
        StatusCode::OK,
        &json!({
            "status": "ok",
            "record_count": store.catalog().len(),
            "catalog_version": store.catalog().version(),
            "thesaurus_loaded": st.thesaurus_loaded,
        }),
    )
}

impl From<HarvestError> for ApiError {
    fn from(e: HarvestError) -> Self {
        match e {
            HarvestError::InvalidJob(m) => ApiError::malformed(m),
            HarvestError::InProgress(m) => ApiError::new(ErrorCode::HarvestInProgress, m),
            e @ HarvestError::Io { .. } => ApiError::internal(e.to_string()),
        }
    }
}
