//! HTTP API: agent sessions and recording management.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pulse_core::Channel;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datastore::{parse_csv, parse_instant, IngestRequest, StoreError};
use crate::orchestrator::datapipe::DataPipe;
use crate::orchestrator::{ExtractedValue, Orchestrator, SessionOutcome};

/// Upload limit for `POST /v1/recordings`.
const MAX_UPLOAD_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
    Clarification,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extracted_values: Vec<ExtractedValue>,
    pub timestamp_ms: u128,
}

struct SessionData {
    history: Vec<Turn>,
    pipe: DataPipe,
}

struct Session {
    busy: AtomicBool,
    last_used: Mutex<Instant>,
    data: Mutex<SessionData>,
}

/// Clears the in-flight flag when dropped.
struct InFlight(Arc<Session>);

impl Drop for InFlight {
    fn drop(&mut self) {
        self.0.busy.store(false, Ordering::Release);
    }
}

pub struct AppState {
    orchestrator: Arc<Orchestrator>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    idle: Duration,
}

impl AppState {
    pub fn new(orchestrator: Orchestrator) -> Self {
        let idle = Duration::from_secs(orchestrator.config.service.session_idle_s);
        Self {
            orchestrator: Arc::new(orchestrator),
            sessions: Mutex::new(HashMap::new()),
            idle,
        }
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orchestrator
    }

    fn session(&self, id: &str) -> Option<Arc<Session>> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let idle = self.idle;
        sessions.retain(|_, s| {
            s.busy.load(Ordering::Acquire) || s.last_used.lock().expect("poisoned").elapsed() < idle
        });
        let s = sessions.get(id).cloned()?;
        *s.last_used.lock().expect("poisoned") = Instant::now();
        Some(s)
    }
}

/// Error body: `{code, message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"code": self.code, "message": self.message})),
        )
            .into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UserNotFound { .. } | StoreError::NoRecordingAtTime { .. } => {
                StatusCode::NOT_FOUND
            }
            StoreError::OverlapConflict { .. } => StatusCode::CONFLICT,
            StoreError::Parse { .. }
            | StoreError::NonFiniteSample { .. }
            | StoreError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            StoreError::Signal(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Manifest(_) | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id", get(get_session))
        .route("/v1/sessions/:id/query", post(query))
        .route("/v1/users/:id/recordings", get(list_recordings))
        .route("/v1/recordings", post(upload_recording))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
) -> (StatusCode, Json<serde_json::Value>) {
    let id = new_session_id();
    let session = Arc::new(Session {
        busy: AtomicBool::new(false),
        last_used: Mutex::new(Instant::now()),
        data: Mutex::new(SessionData {
            history: Vec::new(),
            pipe: DataPipe::new(),
        }),
    });
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), session);
    (StatusCode::CREATED, Json(json!({ "session_id": id })))
}

fn session_not_found(id: &str) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        "SessionNotFound",
        format!("no active session {id}"),
    )
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = state.session(&id).ok_or_else(|| session_not_found(&id))?;
    let data = session.data.try_lock().map_err(|_| in_flight())?;
    Ok(Json(json!({"session_id": id, "history": data.history})))
}

fn in_flight() -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "QueryInFlight",
        "another query is still running in this session",
    )
}

#[derive(Debug, Deserialize)]
pub struct QueryBody {
    pub text: String,
}

async fn query(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<QueryBody>,
) -> Result<Response, ApiError> {
    if body.text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "InvalidRequest",
            "query text is empty",
        ));
    }
    let session = state.session(&id).ok_or_else(|| session_not_found(&id))?;
    if session
        .busy
        .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
        .is_err()
    {
        return Err(in_flight());
    }
    let guard = InFlight(session);
    let orchestrator = state.orchestrator.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let session = &guard.0;
        let mut data = session.data.lock().expect("session poisoned");
        let history: Vec<String> = data
            .history
            .iter()
            .filter(|t| t.role == Role::User)
            .map(|t| t.text.clone())
            .collect();
        data.history.push(Turn {
            role: Role::User,
            text: body.text.clone(),
            extracted_values: Vec::new(),
            timestamp_ms: now_ms(),
        });
        let outcome = orchestrator.run_session(&id, &body.text, &history, &mut data.pipe);
        let turn = match &outcome {
            SessionOutcome::Response(r) => {
                Some((Role::Agent, r.text.clone(), r.extracted_values.clone()))
            }
            SessionOutcome::Clarification(c) => {
                Some((Role::Clarification, c.message.clone(), Vec::new()))
            }
            SessionOutcome::Failed(_) => None,
        };
        if let Some((role, text, extracted_values)) = turn {
            data.history.push(Turn {
                role,
                text,
                extracted_values,
                timestamp_ms: now_ms(),
            });
        }
        drop(data);
        drop(guard);
        outcome
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    Ok(match outcome {
        SessionOutcome::Response(r) => (StatusCode::OK, Json(r)).into_response(),
        SessionOutcome::Clarification(c) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({
                "code": "ClarificationNeeded",
                "message": c.message,
                "session_id": c.session_id,
                "attempts": c.attempts,
            })),
        )
            .into_response(),
        SessionOutcome::Failed(f) => {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, &f.code, f.message).into_response()
        }
    })
}

async fn list_recordings(
    State(state): State<Arc<AppState>>,
    Path(user): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let orchestrator = state.orchestrator.clone();
    let list = tokio::task::spawn_blocking(move || orchestrator.store.list_recordings(&user))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
        })??;
    Ok(Json(json!(list)))
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
}

/// Multipart fields: `file` (CSV `t_offset_s,value`), `user_id`,
/// `modality`, `start` (ISO date-time or Unix seconds), `sample_rate_hz`.
async fn upload_recording(
    State(state): State<Arc<AppState>>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let mut fields: HashMap<String, String> = HashMap::new();
    let mut csv: Option<Vec<u8>> = None;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| bad_request(e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        if name == "file" {
            csv = Some(
                field
                    .bytes()
                    .await
                    .map_err(|e| bad_request(e.to_string()))?
                    .to_vec(),
            );
        } else {
            let text = field.text().await.map_err(|e| bad_request(e.to_string()))?;
            fields.insert(name, text);
        }
    }
    let get = |k: &str| {
        fields
            .get(k)
            .map(|s| s.trim())
            .ok_or_else(|| bad_request(format!("missing field {k}")))
    };
    let csv = csv.ok_or_else(|| bad_request("missing field file"))?;
    let modality: Channel = get("modality")?
        .parse()
        .map_err(|_| bad_request("modality must be PPG or ECG_LEAD_II"))?;
    let sample_rate_hz: f64 = get("sample_rate_hz")?
        .parse()
        .map_err(|_| bad_request("sample_rate_hz must be a number"))?;
    let orchestrator = state.orchestrator.clone();
    let tz = orchestrator.config.tz().map_err(|e| {
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "ConfigError",
            e.to_string(),
        )
    })?;
    let request = IngestRequest {
        user_id: get("user_id")?.to_string(),
        modality,
        start_epoch_s: parse_instant(get("start")?, tz)?,
        sample_rate_hz,
    };
    let meta = tokio::task::spawn_blocking(move || {
        let samples = parse_csv(csv.as_slice(), request.sample_rate_hz)?;
        orchestrator.store.insert(&request, &samples)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(meta)).into_response())
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
