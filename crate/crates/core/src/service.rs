//! HTTP+JSON session service.
//!
//! | method | path                        | purpose                          |
//! |--------|-----------------------------|----------------------------------|
//! | POST   | `/api/sessions`             | start a session at `Greeting`    |
//! | POST   | `/api/sessions/{id}/input`  | `{"utterance": ..}` or `{"frame": ..}` |
//! | GET    | `/api/sessions/{id}`        | full session state               |
//! | GET    | `/api/sessions/{id}/report` | risk report of a finished session |
//! | GET    | `/api/health`               | model hash and session counts    |
//!
//! Every response body carries `schema_version`. Failures are
//! `{"code": "not_found" | "bad_input" | "conflict" | "internal", "message": ..}`.
//!
//! Sessions are journaled under the data directory: `sessions/<id>.jsonl`
//! receives one full snapshot per transition and `index.jsonl` one line per
//! created session. Both are fsynced before a request is acknowledged, and on
//! startup each session is restored from the last complete line of its
//! journal.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::anamnesis::{
    advance, render_report, AdjustmentConfig, AnamnesisError, Decision, RawInput, RiskReport, Session, Stage,
    Vocabulary,
};
use crate::artifact::{ArtifactError, LoadedArtifact, ModelArtifact};
use crate::dataset::{FeatureSet, Sex};
use crate::sensors::Measurement;

pub const API_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "VIRTDOC_PORT";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("model uses feature set {0:?}; sessions can only supply sex, age and BMI")]
    UnsupportedModel(FeatureSet),
    #[error("journal error in {path}: {source}")]
    Journal { path: String, source: std::io::Error },
    #[error("invalid {PORT_ENV} value `{0}`")]
    InvalidPort(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Wire types

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    BadInput,
    Conflict,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub schema_version: u32,
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { schema_version: API_SCHEMA_VERSION, code, message: message.into(), status: status.as_u16() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, format!("no session with id {id}"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, message)
    }
}

impl From<AnamnesisError> for ApiError {
    fn from(e: AnamnesisError) -> Self {
        let (status, code) = match e {
            AnamnesisError::WrongInputKind { .. } | AnamnesisError::InvalidSeverity(_) => {
                (StatusCode::BAD_REQUEST, ErrorCode::BadInput)
            }
            AnamnesisError::SessionDone | AnamnesisError::TooManyRetries(_) | AnamnesisError::SessionNotDone(_) => {
                (StatusCode::CONFLICT, ErrorCode::Conflict)
            }
            AnamnesisError::DegenerateBase(_) | AnamnesisError::Estimator(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal)
            }
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

/// Compact session state returned after create and input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub schema_version: u32,
    pub id: String,
    pub stage: Stage,
    pub prompt: String,
    pub retry_count: u32,
    pub handover_required: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_kg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<Measurement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjusted_probability: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

impl From<&Session> for SessionView {
    fn from(s: &Session) -> Self {
        SessionView {
            schema_version: API_SCHEMA_VERSION,
            id: s.id.clone(),
            stage: s.stage,
            prompt: s.prompt().to_string(),
            retry_count: s.retry_count(),
            handover_required: s.handover_required,
            sex: s.sex,
            age: s.age,
            weight_kg: s.weight_kg,
            measurement: s.measurement,
            base_probability: s.base_probability,
            adjusted_probability: s.adjusted_probability,
            decision: s.decision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub schema_version: u32,
    pub prompt: String,
    #[serde(flatten)]
    pub session: Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: RiskReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub schema_version: u32,
    pub status: String,
    pub model_loaded: bool,
    pub model_hash: Option<String>,
    pub sessions: usize,
    pub open_sessions: usize,
    pub done_sessions: usize,
}

// ---------------------------------------------------------------------------
// Session store

#[derive(Debug, Serialize, Deserialize)]
struct IndexLine {
    id: String,
}

/// In-memory sessions backed by an optional on-disk journal.
pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    index_lock: Mutex<()>,
}

fn journal_err(path: &Path, source: std::io::Error) -> ServiceError {
    ServiceError::Journal { path: path.display().to_string(), source }
}

fn append_line(path: &Path, line: &str) -> Result<(), ServiceError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| journal_err(path, e))?;
    file.write_all(line.as_bytes()).and_then(|_| file.write_all(b"\n")).map_err(|e| journal_err(path, e))?;
    file.sync_all().map_err(|e| journal_err(path, e))
}

/// Last line of a journal that parses as a session. A torn final write is
/// skipped.
fn last_snapshot(path: &Path) -> Result<Option<Session>, ServiceError> {
    let file = File::open(path).map_err(|e| journal_err(path, e))?;
    let mut last = None;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| journal_err(path, e))?;
        if let Ok(session) = serde_json::from_str::<Session>(&line) {
            last = Some(session);
        }
    }
    Ok(last)
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore { dir: None, sessions: RwLock::new(HashMap::new()), index_lock: Mutex::new(()) }
    }

    /// Opens (creating if needed) a journal directory and replays it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let dir = dir.into();
        let session_dir = dir.join("sessions");
        fs::create_dir_all(&session_dir).map_err(|e| journal_err(&session_dir, e))?;
        let mut sessions = HashMap::new();
        let index = dir.join("index.jsonl");
        if index.exists() {
            let file = File::open(&index).map_err(|e| journal_err(&index, e))?;
            for line in BufReader::new(file).lines() {
                let line = line.map_err(|e| journal_err(&index, e))?;
                let Ok(entry) = serde_json::from_str::<IndexLine>(&line) else { continue };
                let path = session_dir.join(format!("{}.jsonl", entry.id));
                if !path.exists() {
                    continue;
                }
                if let Some(session) = last_snapshot(&path)? {
                    sessions.insert(entry.id, Arc::new(Mutex::new(session)));
                }
            }
        }
        Ok(SessionStore { dir: Some(dir), sessions: RwLock::new(sessions), index_lock: Mutex::new(()) })
    }

    fn journal_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("sessions").join(format!("{id}.jsonl")))
    }

    fn persist(&self, session: &Session) -> Result<(), ServiceError> {
        if let Some(path) = self.journal_path(&session.id) {
            let line = serde_json::to_string(session).expect("session serializes");
            append_line(&path, &line)?;
        }
        Ok(())
    }

    pub async fn create(&self, session: Session) -> Result<(), ServiceError> {
        self.persist(&session)?;
        if let Some(dir) = &self.dir {
            let _guard = self.index_lock.lock().await;
            let line = serde_json::to_string(&IndexLine { id: session.id.clone() }).expect("index serializes");
            append_line(&dir.join("index.jsonl"), &line)?;
        }
        self.sessions.write().await.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        Ok(())
    }

    pub async fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        self.sessions.read().await.get(id).cloned()
    }

    pub async fn snapshot(&self) -> Vec<Session> {
        let handles: Vec<_> = self.sessions.read().await.values().cloned().collect();
        let mut out = Vec::with_capacity(handles.len());
        for h in handles {
            out.push(h.lock().await.clone());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Application

pub struct AppState {
    pub model: Option<Arc<LoadedArtifact>>,
    pub store: SessionStore,
    pub vocabulary: Vocabulary,
    pub adjustment: AdjustmentConfig,
}

impl AppState {
    pub fn new(model: Option<LoadedArtifact>, store: SessionStore) -> Self {
        AppState {
            model: model.map(Arc::new),
            store,
            vocabulary: Vocabulary::default(),
            adjustment: AdjustmentConfig::default(),
        }
    }
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn model(state: &AppState) -> Result<Arc<LoadedArtifact>, ApiError> {
    state
        .model
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::Internal, "no model loaded"))
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    model(&state)?;
    let session = Session::new(uuid::Uuid::new_v4().simple().to_string(), state.adjustment);
    state.store.create(session.clone()).await.map_err(|e| ApiError::internal(e.to_string()))?;
    Ok((StatusCode::CREATED, Json(SessionView::from(&session))))
}

async fn submit_input(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<RawInput>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let Json(raw) = body.map_err(|e| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            ErrorCode::BadInput,
            format!("expected {{\"utterance\": text}} or {{\"frame\": text}}: {}", e.body_text()),
        )
    })?;
    let model = model(&state)?;
    let mut session = handle.lock().await;
    if session.is_done() {
        return Err(AnamnesisError::SessionDone.into());
    }
    let input = session
        .parse_input(&raw, &state.vocabulary)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, ErrorCode::BadInput, e.to_string()))?;
    let next = advance(&session, &input, &model.artifact, now_millis())?;
    state.store.persist(&next).map_err(|e| ApiError::internal(e.to_string()))?;
    *session = next;
    Ok(Json(SessionView::from(&*session)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionDocument>, ApiError> {
    let handle = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let session = handle.lock().await.clone();
    Ok(Json(SessionDocument { schema_version: API_SCHEMA_VERSION, prompt: session.prompt().to_string(), session }))
}

async fn get_report(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ReportDocument>, ApiError> {
    let handle = state.store.get(&id).await.ok_or_else(|| ApiError::not_found(&id))?;
    let report = render_report(&*handle.lock().await)?;
    Ok(Json(ReportDocument { schema_version: API_SCHEMA_VERSION, report }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let sessions = state.store.snapshot().await;
    let done = sessions.iter().filter(|s| s.is_done()).count();
    Json(Health {
        schema_version: API_SCHEMA_VERSION,
        status: "ok".into(),
        model_loaded: state.model.is_some(),
        model_hash: state.model.as_ref().map(|m| m.hash.clone()),
        sessions: sessions.len(),
        open_sessions: sessions.len() - done,
        done_sessions: done,
    })
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/input", post(submit_input))
        .route("/api/sessions/{id}/report", get(get_report))
        .route("/api/health", get(health))
        .fallback(fallback)
        .with_state(state)
}

/// Loads an artifact and checks it can serve interview sessions.
pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedArtifact, ServiceError> {
    let loaded = ModelArtifact::load(path)?;
    let fs = loaded.artifact.network.feature_set;
    if fs != FeatureSet::Basic {
        return Err(ServiceError::UnsupportedModel(fs));
    }
    Ok(loaded)
}

/// `VIRTDOC_PORT` wins over the flag; the default is 8080.
pub fn resolve_port(flag: Option<u16>) -> Result<u16, ServiceError> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| ServiceError::InvalidPort(v)),
        Err(_) => Ok(flag.unwrap_or(DEFAULT_PORT)),
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub model_path: PathBuf,
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
}

/// Loads the model, replays the journal and serves until ctrl-c. The bound
/// address is printed to stdout once the listener is up.
pub async fn serve(config: ServeConfig) -> Result<(), ServiceError> {
    let model = load_model(&config.model_path)?;
    let store = SessionStore::open(&config.data_dir)?;
    let state = Arc::new(AppState::new(Some(model), store));
    let listener = tokio::net::TcpListener::bind((config.host.as_str(), config.port)).await?;
    let addr: SocketAddr = listener.local_addr()?;
    println!("listening on http://{addr}");
    std::io::stdout().flush()?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
