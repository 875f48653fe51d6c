//! HTTP interface over live and stored verification runs and the queue of
//! human interventions they wait on.
//!
//! | Endpoint | Success | Errors |
//! |---|---|---|
//! | `POST /runs` (body: run config) | 201 `{run_id}` | 422 invalid config or set-up failure |
//! | `GET /runs` | 200 list of run summaries | |
//! | `GET /runs/{id}` | 200 run detail | 404 unknown run |
//! | `GET /runs/{id}/transcript?since=N&wait_ms=T` | 200 messages with `seq > N` | 404 unknown run |
//! | `GET /interventions?run_id=&state=` | 200 list | |
//! | `POST /interventions/{id}/decision` | 200 answered entry | 404 unknown, 409 not waiting, 422 invalid decision |
//! | `GET /runs/{id}/report` | 200 markdown | 404 unknown run or no report yet |

pub mod queue;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{oneshot, watch};

use saarthi_core::config::RunConfig;
use saarthi_core::conversation::{HilDecision, Message};
use saarthi_core::metrics::KpiSummary;
use saarthi_core::pipeline::{HumanInput, RunObserver};
use saarthi_core::record::{RunRecord, Stage};
use saarthi_core::setup::{launch, SetupError};
use saarthi_core::store::{list_runs, load_run, read_transcript, StoreError};

pub use queue::{InterventionQueue, InterventionState, PendingIntervention, QueueError};

/// Runs one configured pipeline to completion, asking `human` on escalation.
pub type Launcher = Arc<
    dyn Fn(&RunConfig, &dyn HumanInput, &dyn RunObserver) -> Result<RunRecord, SetupError>
        + Send
        + Sync,
>;

/// The production launcher: gateway and prover come from the config.
pub fn default_launcher() -> Launcher {
    Arc::new(|config, human, observer| launch(config, human, observer, None))
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::NotFound(_) => ApiError::NotFound(e.to_string()),
            QueueError::Conflict { .. } | QueueError::DuplicateWaiting { .. } => {
                ApiError::Conflict(e.to_string())
            }
            QueueError::Invalid(_) => ApiError::Unprocessable(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RunStatus {
    Running,
    Success,
    Failed,
    Aborted,
    /// The launcher itself failed after the run had started.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    pub stage: Stage,
    pub model_id: String,
    pub messages: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpi: Option<KpiSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDetail {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The intervention this run is parked on, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waiting_intervention: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptPage {
    pub run_id: String,
    pub messages: Vec<Message>,
    /// Pass back as `since` to fetch the following page.
    pub next_since: u64,
    /// The run has finished; no further messages will arrive.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Started {
    pub run_id: String,
}

struct RunEntry {
    dir: PathBuf,
    config: RunConfig,
    stage: Stage,
    transcript: Vec<Message>,
    record: Option<RunRecord>,
    error: Option<String>,
    finished: bool,
    changed: watch::Sender<u64>,
}

impl RunEntry {
    fn new(dir: PathBuf, config: RunConfig) -> Self {
        RunEntry {
            dir,
            config,
            stage: Stage::Init,
            transcript: Vec::new(),
            record: None,
            error: None,
            finished: false,
            changed: watch::channel(0).0,
        }
    }

    fn bump(&self) {
        self.changed.send_modify(|v| *v += 1);
    }

    fn status(&self) -> RunStatus {
        match (&self.record, self.finished) {
            (Some(r), _) => match r.outcome {
                saarthi_core::record::Outcome::Success => RunStatus::Success,
                saarthi_core::record::Outcome::Failed => RunStatus::Failed,
                saarthi_core::record::Outcome::Aborted => RunStatus::Aborted,
            },
            (None, true) => RunStatus::Error,
            (None, false) => RunStatus::Running,
        }
    }

    fn summary(&self, run_id: &str) -> RunSummary {
        RunSummary {
            run_id: run_id.to_string(),
            status: self.status(),
            stage: self.record.as_ref().map_or(self.stage, |r| r.stage_reached),
            model_id: self.config.model_id.clone(),
            messages: self.transcript.len(),
            kpi: self.record.as_ref().map(|r| r.kpi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    /// Unanswered interventions expire after this long and count as SKIP.
    pub intervention_deadline: Option<Duration>,
    /// Upper bound on how long a transcript long-poll may park.
    pub max_long_poll: Duration,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions {
            intervention_deadline: None,
            max_long_poll: Duration::from_secs(30),
        }
    }
}

struct Shared {
    runs: RwLock<BTreeMap<String, RunEntry>>,
    queue: Arc<InterventionQueue>,
    launcher: Launcher,
    options: ServiceOptions,
}

/// The run registry and intervention queue behind the HTTP routes.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    pub fn new(launcher: Launcher, options: ServiceOptions) -> Self {
        Service {
            shared: Arc::new(Shared {
                runs: RwLock::default(),
                queue: Arc::new(InterventionQueue::new(options.intervention_deadline)),
                launcher,
                options,
            }),
        }
    }

    /// Registers the finished runs stored under `base`.
    pub fn load_history(&self, base: &std::path::Path) -> Result<usize, StoreError> {
        let mut loaded = Vec::new();
        for dir in list_runs(base)? {
            let record = load_run(&dir)?;
            let mut entry = RunEntry::new(dir.clone(), record.config.clone());
            entry.transcript = read_transcript(&dir)?;
            entry.stage = record.stage_reached;
            entry.finished = true;
            let id = record.run_id.clone();
            entry.record = Some(record);
            loaded.push((id, entry));
        }
        let n = loaded.len();
        self.write_runs().extend(loaded);
        Ok(n)
    }

    fn read_runs(&self) -> RwLockReadGuard<'_, BTreeMap<String, RunEntry>> {
        self.shared.runs.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write_runs(&self) -> RwLockWriteGuard<'_, BTreeMap<String, RunEntry>> {
        self.shared.runs.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn queue(&self) -> &InterventionQueue {
        &self.shared.queue
    }

    /// Starts a run on its own thread and returns its id once the run
    /// directory exists. Set-up failures before that point are returned
    /// here instead.
    pub fn start_run(&self, mut config: RunConfig) -> Result<String, ApiError> {
        config.service_mode = true;
        config
            .check_invariants()
            .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
        let (tx, rx) = mpsc::channel();
        let observer = ServiceObserver {
            service: self.clone(),
            config: config.clone(),
            run_id: Mutex::new(None),
            started: Mutex::new(Some(tx.clone())),
        };
        let service = self.clone();
        std::thread::spawn(move || {
            let outcome = catch_unwind(AssertUnwindSafe(|| {
                (service.shared.launcher)(&config, service.shared.queue.as_ref(), &observer)
            }));
            let result = match outcome {
                Ok(Ok(record)) => Ok(record),
                Ok(Err(e)) => Err(e.to_string()),
                Err(_) => Err("run thread panicked".to_string()),
            };
            let run_id = observer.run_id.lock().unwrap_or_else(|p| p.into_inner()).clone();
            match run_id {
                Some(id) => service.finish(&id, result),
                None => {
                    let message = result.err().unwrap_or_else(|| "run never started".into());
                    let _ = tx.send(Err(message));
                }
            }
        });
        match rx.recv() {
            Ok(Ok(id)) => Ok(id),
            Ok(Err(message)) => Err(ApiError::Unprocessable(message)),
            Err(_) => Err(ApiError::Internal("run thread exited before starting".into())),
        }
    }

    fn finish(&self, run_id: &str, result: Result<RunRecord, String>) {
        let mut runs = self.write_runs();
        if let Some(entry) = runs.get_mut(run_id) {
            match result {
                Ok(record) => entry.record = Some(record),
                Err(e) => entry.error = Some(e),
            }
            entry.finished = true;
            entry.bump();
        }
    }

    pub fn list(&self) -> Vec<RunSummary> {
        self.read_runs().iter().map(|(id, e)| e.summary(id)).collect()
    }

    pub fn detail(&self, run_id: &str) -> Result<RunDetail, ApiError> {
        let runs = self.read_runs();
        let entry = runs.get(run_id).ok_or_else(|| unknown_run(run_id))?;
        let waiting = self
            .queue()
            .list()
            .into_iter()
            .find(|i| i.run_id == run_id && i.state == InterventionState::Waiting)
            .map(|i| i.intervention_id);
        Ok(RunDetail {
            summary: entry.summary(run_id),
            config: entry.config.clone(),
            record: entry.record.clone(),
            error: entry.error.clone(),
            waiting_intervention: waiting,
        })
    }

    fn page(&self, run_id: &str, since: u64) -> Result<TranscriptPage, ApiError> {
        let runs = self.read_runs();
        let entry = runs.get(run_id).ok_or_else(|| unknown_run(run_id))?;
        let messages: Vec<Message> = entry
            .transcript
            .iter()
            .filter(|m| m.seq > since)
            .cloned()
            .collect();
        Ok(TranscriptPage {
            run_id: run_id.to_string(),
            next_since: messages.last().map_or(since, |m| m.seq),
            messages,
            done: entry.finished,
        })
    }

    /// Messages with `seq > since`, waiting up to `wait` for the first one
    /// to arrive.
    pub async fn transcript(
        &self,
        run_id: &str,
        since: u64,
        wait: Duration,
    ) -> Result<TranscriptPage, ApiError> {
        let mut changes = {
            let runs = self.read_runs();
            runs.get(run_id)
                .ok_or_else(|| unknown_run(run_id))?
                .changed
                .subscribe()
        };
        let deadline = tokio::time::Instant::now() + wait.min(self.shared.options.max_long_poll);
        loop {
            changes.borrow_and_update();
            let page = self.page(run_id, since)?;
            if !page.messages.is_empty() || page.done {
                return Ok(page);
            }
            match tokio::time::timeout_at(deadline, changes.changed()).await {
                Ok(Ok(())) => continue,
                _ => return self.page(run_id, since),
            }
        }
    }

    pub fn report(&self, run_id: &str) -> Result<String, ApiError> {
        let dir = {
            let runs = self.read_runs();
            let entry = runs.get(run_id).ok_or_else(|| unknown_run(run_id))?;
            if entry.record.is_none() {
                return Err(ApiError::NotFound(format!("run {run_id} has no report yet")));
            }
            entry.dir.clone()
        };
        std::fs::read_to_string(dir.join("report.md"))
            .map_err(|e| ApiError::NotFound(format!("report of run {run_id}: {e}")))
    }

    pub fn interventions(&self, filter: &InterventionFilter) -> Vec<PendingIntervention> {
        self.queue()
            .list()
            .into_iter()
            .filter(|i| filter.run_id.as_ref().is_none_or(|r| *r == i.run_id))
            .filter(|i| filter.state.is_none_or(|s| s == i.state))
            .collect()
    }

    pub fn decide(&self, id: &str, decision: HilDecision) -> Result<PendingIntervention, ApiError> {
        Ok(self.queue().submit(id, decision)?)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/runs", post(post_run).get(get_runs))
            .route("/runs/{id}", get(get_run))
            .route("/runs/{id}/transcript", get(get_transcript))
            .route("/runs/{id}/report", get(get_report))
            .route("/interventions", get(get_interventions))
            .route("/interventions/{id}/decision", post(post_decision))
            .with_state(self.clone())
    }
}

fn unknown_run(run_id: &str) -> ApiError {
    ApiError::NotFound(format!("unknown run `{run_id}`"))
}

/// Feeds pipeline progress into the registry.
struct ServiceObserver {
    service: Service,
    config: RunConfig,
    run_id: Mutex<Option<String>>,
    started: Mutex<Option<mpsc::Sender<Result<String, String>>>>,
}

impl ServiceObserver {
    fn with_entry(&self, f: impl FnOnce(&mut RunEntry)) {
        let id = self.run_id.lock().unwrap_or_else(|p| p.into_inner()).clone();
        if let Some(id) = id {
            if let Some(entry) = self.service.write_runs().get_mut(&id) {
                f(entry);
                entry.bump();
            }
        }
    }
}

impl RunObserver for ServiceObserver {
    fn on_start(&self, run_id: &str) {
        let entry = RunEntry::new(self.config.out_dir.join(run_id), self.config.clone());
        self.service.write_runs().insert(run_id.to_string(), entry);
        *self.run_id.lock().unwrap_or_else(|p| p.into_inner()) = Some(run_id.to_string());
        if let Some(tx) = self.started.lock().unwrap_or_else(|p| p.into_inner()).take() {
            let _ = tx.send(Ok(run_id.to_string()));
        }
    }

    fn on_stage(&self, stage: Stage) {
        self.with_entry(|e| e.stage = stage);
    }

    fn on_message(&self, message: &Message) {
        self.with_entry(|e| e.transcript.push(message.clone()));
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct InterventionFilter {
    pub run_id: Option<String>,
    pub state: Option<InterventionState>,
}

#[derive(Debug, Default, Deserialize)]
struct TranscriptQuery {
    since: Option<u64>,
    wait_ms: Option<u64>,
}

/// Long-polls park this long unless the request says otherwise.
const DEFAULT_WAIT: Duration = Duration::from_secs(25);

async fn post_run(
    State(svc): State<Service>,
    Json(config): Json<RunConfig>,
) -> Result<(StatusCode, Json<Started>), ApiError> {
    let run_id = tokio::task::spawn_blocking(move || svc.start_run(config))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(Started { run_id })))
}

async fn get_runs(State(svc): State<Service>) -> Json<Vec<RunSummary>> {
    Json(svc.list())
}

async fn get_run(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<RunDetail>, ApiError> {
    svc.detail(&id).map(Json)
}

async fn get_transcript(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<TranscriptQuery>,
) -> Result<Json<TranscriptPage>, ApiError> {
    let wait = q.wait_ms.map_or(DEFAULT_WAIT, Duration::from_millis);
    svc.transcript(&id, q.since.unwrap_or(0), wait).await.map(Json)
}

async fn get_report(State(svc): State<Service>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = svc.report(&id)?;
    Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], text).into_response())
}

async fn get_interventions(
    State(svc): State<Service>,
    Query(filter): Query<InterventionFilter>,
) -> Json<Vec<PendingIntervention>> {
    Json(svc.interventions(&filter))
}

async fn post_decision(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Json(decision): Json<HilDecision>,
) -> Result<Json<PendingIntervention>, ApiError> {
    svc.decide(&id, decision).map(Json)
}

/// A server running on its own thread; dropping the handle stops it.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    /// Blocks until the server stops on its own (it normally never does).
    pub fn join(mut self) -> std::io::Result<()> {
        let thread = self.thread.take().expect("joined once");
        thread
            .join()
            .unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked")))
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves the routes on a background runtime, with
/// permissive CORS when `cors` is set (for a dashboard on another origin).
pub fn spawn_server(service: Service, addr: &str, cors: bool) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let mut app = service.router();
    if cors {
        app = app.layer(tower_http::cors::CorsLayer::permissive());
    }
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
