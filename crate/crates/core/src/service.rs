//! HTTP control plane over a runs directory.
//!
//! Runs started through `POST /api/runs` execute on worker threads owned by the
//! service; each worker drains an in-process steering queue at iteration
//! boundaries. Everything else is read back from the atomically published run
//! directory, so runs launched from the CLI are visible (read-only) as well.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::classifier::FeatureOracle;
use crate::error::Result;
use crate::fsutil::{read_json, read_jsonl};
use crate::morph::{
    run_engine, FieldError, MetricsRecord, MorphEngine, MorphRunConfig, RunLayout, RunState, RunStatus,
    SteeringCommand, SteeringKind, SteeringPayload,
};

const EVENT_POLL: Duration = Duration::from_millis(200);
const LONG_POLL_DEFAULT_MS: u64 = 25_000;
const START_WAIT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLinks {
    pub metrics: String,
    pub latest_grid: Option<String>,
    pub snapshots: Vec<String>,
    pub events: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub config: MorphRunConfig,
    pub status: RunStatus,
    pub links: RunLinks,
}

#[derive(Debug, Deserialize)]
pub struct SteerRequest {
    pub kind: SteeringKind,
    #[serde(default)]
    pub payload: SteeringPayload,
}

struct Worker {
    steer: mpsc::Sender<SteeringCommand>,
}

pub struct ServiceState {
    runs_root: PathBuf,
    workers: Mutex<HashMap<String, Worker>>,
}

pub type SharedState = Arc<ServiceState>;

impl ServiceState {
    /// Creates the runs directory if needed. Runs left in `running` state by a
    /// previous service process have no worker any more and are marked failed.
    pub fn new(runs_root: PathBuf) -> Result<SharedState> {
        std::fs::create_dir_all(&runs_root)?;
        for id in list_run_ids(&runs_root) {
            let layout = RunLayout::new(&runs_root, &id);
            if let Ok(mut status) = RunStatus::read(&layout) {
                if status.state == RunState::Running {
                    status.state = RunState::Failed;
                    status.error = Some("worker lost: service restarted while the run was active".into());
                    status.updated_at = chrono::Utc::now().to_rfc3339();
                    status.write(&layout)?;
                }
            }
        }
        Ok(Arc::new(Self {
            runs_root,
            workers: Mutex::new(HashMap::new()),
        }))
    }

    pub fn runs_root(&self) -> &std::path::Path {
        &self.runs_root
    }

    fn layout(&self, id: &str) -> RunLayout {
        RunLayout::new(&self.runs_root, id)
    }

    fn descriptor(&self, id: &str) -> Option<RunDescriptor> {
        if !valid_id(id) {
            return None;
        }
        let layout = self.layout(id);
        let config: MorphRunConfig = read_json(&layout.config()).ok()?;
        let status = RunStatus::read(&layout).ok()?;
        let base = format!("/api/runs/{id}");
        Some(RunDescriptor {
            run_id: id.to_string(),
            config,
            status,
            links: RunLinks {
                metrics: format!("{base}/metrics"),
                latest_grid: (!layout.grid_iterations().is_empty()).then(|| format!("{base}/grids/latest")),
                snapshots: layout
                    .snapshot_iterations()
                    .into_iter()
                    .map(|k| format!("snapshots/iter_{k}.ckpt"))
                    .collect(),
                events: format!("{base}/events"),
            },
        })
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn list_run_ids(root: &std::path::Path) -> Vec<String> {
    let mut ids: Vec<String> = std::fs::read_dir(root)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("status.json").is_file())
        .filter_map(|e| e.file_name().to_str().map(str::to_owned))
        .collect();
    ids.sort();
    ids
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown run `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if !self.fields.is_empty() {
            body["fields"] = json!(self.fields);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/runs", get(list_runs).post(create_run))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/metrics", get(get_metrics))
        .route("/api/runs/{id}/grids/{which}", get(get_grid))
        .route("/api/runs/{id}/steer", post(steer))
        .route("/api/runs/{id}/stop", post(stop))
        .route("/api/runs/{id}/events", get(events))
        .with_state(state)
}

/// Serves the API on `bind` until the process is terminated.
pub async fn serve(bind: SocketAddr, runs_root: PathBuf) -> Result<()> {
    let state = ServiceState::new(runs_root)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("serving {} on http://{}", state.runs_root.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn index(State(state): State<SharedState>) -> Html<String> {
    let rows: String = list_run_ids(&state.runs_root)
        .iter()
        .filter_map(|id| state.descriptor(id))
        .map(|d| {
            format!(
                "<tr><td><a href=\"/api/runs/{0}\">{0}</a></td><td>{1:?}</td><td>{2}</td></tr>",
                d.run_id, d.status.state, d.status.iteration
            )
        })
        .collect();
    Html(format!(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>distmorph</title></head><body>\
         <h1>distmorph runs</h1><p>The dashboard is not bundled; this page lists runs known to the service.</p>\
         <table><tr><th>run</th><th>state</th><th>iteration</th></tr>{rows}</table></body></html>"
    ))
}

async fn list_runs(State(state): State<SharedState>) -> Json<Vec<RunDescriptor>> {
    Json(
        list_run_ids(&state.runs_root)
            .iter()
            .filter_map(|id| state.descriptor(id))
            .collect(),
    )
}

async fn get_run(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<RunDescriptor>> {
    state.descriptor(&id).map(Json).ok_or_else(|| ApiError::not_found(&id))
}

async fn create_run(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let config: MorphRunConfig = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid run config: {e}")))?;
    if let Err(fields) = config.validate() {
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            message: "invalid run config".into(),
            fields,
        });
    }
    let id = config.run_id.clone();
    {
        let workers = state.workers.lock().expect("worker registry lock");
        if workers.contains_key(&id) || state.layout(&id).dir.exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("run `{id}` already exists")));
        }
    }

    let cfg = config.clone();
    let (engine, oracle) = tokio::task::spawn_blocking(move || -> Result<_> {
        let engine = MorphEngine::from_checkpoints(cfg.clone())?;
        let oracle = match &cfg.eval_oracle_ckpt {
            Some(p) => Some(FeatureOracle::from_checkpoint(&Checkpoint::load(p)?)?),
            None => None,
        };
        Ok((engine, oracle))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;

    let (tx, rx) = mpsc::channel();
    {
        let mut workers = state.workers.lock().expect("worker registry lock");
        if workers.contains_key(&id) || state.layout(&id).dir.exists() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("run `{id}` already exists")));
        }
        workers.insert(id.clone(), Worker { steer: tx });
    }
    spawn_worker(state.clone(), engine, oracle, rx);

    let layout = state.layout(&id);
    let deadline = Instant::now() + START_WAIT;
    while !layout.status().is_file() && Instant::now() < deadline {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    let body = json!({ "run_id": id, "links": state.descriptor(&id).map(|d| d.links) });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn spawn_worker(
    state: SharedState,
    engine: MorphEngine,
    oracle: Option<FeatureOracle>,
    mut rx: mpsc::Receiver<SteeringCommand>,
) {
    let id = engine.config.run_id.clone();
    std::thread::Builder::new()
        .name(format!("morph-{id}"))
        .spawn(move || {
            let root = state.runs_root.clone();
            let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| run_engine(engine, oracle, &root, &mut rx)));
            let layout = state.layout(&id);
            match outcome {
                Ok(Ok(a)) => log::info!("run {id} ended {:?} at iteration {}", a.final_state, a.final_iteration),
                Ok(Err(e)) => log::warn!("run {id} failed: {e}"),
                Err(panic) => {
                    let what = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "worker panicked".into());
                    log::error!("run {id} crashed: {what}");
                    if let Ok(mut status) = RunStatus::read(&layout) {
                        status.state = RunState::Failed;
                        status.error = Some(format!("worker crashed: {what}"));
                        status.updated_at = chrono::Utc::now().to_rfc3339();
                        let _ = status.write(&layout);
                    }
                }
            }
        })
        .expect("spawn morph worker thread");
}

#[derive(Debug, Default, Deserialize)]
pub struct MetricsQuery {
    #[serde(default)]
    pub from_iter: u64,
}

fn read_metrics(layout: &RunLayout) -> Vec<MetricsRecord> {
    read_jsonl(&layout.metrics()).unwrap_or_default()
}

async fn get_metrics(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<Vec<MetricsRecord>>> {
    state.descriptor(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut records = read_metrics(&state.layout(&id));
    records.retain(|r| r.iteration >= q.from_iter);
    Ok(Json(records))
}

async fn get_grid(
    State(state): State<SharedState>,
    Path((id, which)): Path<(String, String)>,
) -> ApiResult<Response> {
    state.descriptor(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let layout = state.layout(&id);
    let iteration = if which == "latest" {
        layout
            .grid_iterations()
            .last()
            .copied()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("run `{id}` has no grids yet")))?
    } else {
        which
            .parse::<u64>()
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("`{which}` is not an iteration")))?
    };
    let bytes = std::fs::read(layout.grid(iteration))
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("run `{id}` has no grid at iteration {iteration}")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static("x-iteration"), iteration.to_string()),
        ],
        bytes,
    )
        .into_response())
}

fn enqueue(state: &ServiceState, id: &str, kind: SteeringKind, payload: SteeringPayload) -> ApiResult<Response> {
    let desc = state.descriptor(id).ok_or_else(|| ApiError::not_found(id))?;
    if desc.status.state.is_terminal() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("run `{id}` is {:?}", desc.status.state).to_lowercase(),
        ));
    }
    let cmd = SteeringCommand {
        kind,
        payload,
        issued_at_iteration: desc.status.iteration,
    };
    if kind == SteeringKind::SetLambdas {
        cmd.resolve_lambdas((desc.status.lambdas.lambda_cls, desc.status.lambdas.lambda_disc))
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    }
    let workers = state.workers.lock().expect("worker registry lock");
    let worker = workers
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("run `{id}` is not supervised by this service")))?;
    worker
        .steer
        .send(cmd.clone())
        .map_err(|_| ApiError::new(StatusCode::CONFLICT, format!("run `{id}` has already ended")))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "accepted": true, "command": cmd }))).into_response())
}

async fn steer(State(state): State<SharedState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let req: SteerRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid steering command: {e}")))?;
    enqueue(&state, &id, req.kind, req.payload)
}

async fn stop(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Response> {
    enqueue(&state, &id, SteeringKind::Stop, SteeringPayload::default())
}

#[derive(Debug, Default, Deserialize)]
pub struct EventsQuery {
    /// `sse` or `poll`; otherwise chosen from the `Accept` header.
    pub mode: Option<String>,
    /// Long-poll: return records with iteration strictly greater than this.
    pub after: Option<u64>,
    pub timeout_ms: Option<u64>,
}

/// Long-poll response body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventBatch {
    pub status: RunStatus,
    pub metrics: Vec<MetricsRecord>,
}

async fn events(
    State(state): State<SharedState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    state.descriptor(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let wants_sse = match q.mode.as_deref() {
        Some("sse") => true,
        Some("poll") => false,
        _ => headers
            .get(header::ACCEPT)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("text/event-stream")),
    };
    let layout = state.layout(&id);
    if wants_sse {
        return Ok(Sse::new(event_stream(layout)).keep_alive(KeepAlive::default()).into_response());
    }

    let deadline = Instant::now() + Duration::from_millis(q.timeout_ms.unwrap_or(LONG_POLL_DEFAULT_MS));
    loop {
        let status = RunStatus::read(&layout).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let mut metrics = read_metrics(&layout);
        if let Some(after) = q.after {
            metrics.retain(|r| r.iteration > after);
        }
        let ready = q.after.is_none() || !metrics.is_empty() || status.state.is_terminal();
        if ready || Instant::now() >= deadline {
            return Ok(Json(EventBatch { status, metrics }).into_response());
        }
        tokio::time::sleep(EVENT_POLL).await;
    }
}

struct StreamCursor {
    layout: RunLayout,
    last_status: Option<RunStatus>,
    next_iteration: u64,
    first: bool,
    done: bool,
}

/// `status` events whenever status.json changes and one `metrics` event per
/// new record; the stream ends after the terminal status has been sent.
fn event_stream(layout: RunLayout) -> impl Stream<Item = std::result::Result<Event, Infallible>> {
    let cursor = StreamCursor {
        layout,
        last_status: None,
        next_iteration: 0,
        first: true,
        done: false,
    };
    stream::unfold(cursor, |mut cur| async move {
        if cur.done {
            return None;
        }
        if !cur.first {
            tokio::time::sleep(EVENT_POLL).await;
        }
        cur.first = false;
        let mut out = Vec::new();
        for r in read_metrics(&cur.layout) {
            if r.iteration >= cur.next_iteration {
                cur.next_iteration = r.iteration + 1;
                if let Ok(ev) = Event::default().event("metrics").json_data(&r) {
                    out.push(Ok(ev));
                }
            }
        }
        if let Ok(status) = RunStatus::read(&cur.layout) {
            if cur.last_status.as_ref() != Some(&status) {
                if let Ok(ev) = Event::default().event("status").json_data(&status) {
                    out.push(Ok(ev));
                }
                cur.done = status.state.is_terminal();
                cur.last_status = Some(status);
            }
        }
        Some((stream::iter(out), cur))
    })
    .flatten()
}
