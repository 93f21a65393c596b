//! Mission-control API over the abyss simulator.
//!
//! Routes, all under `/v1`:
//!
//! | method | path                         |                                  |
//! |--------|------------------------------|----------------------------------|
//! | POST   | `/missions`                  | create and start a mission       |
//! | GET    | `/missions/{id}`             | status and latest telemetry      |
//! | POST   | `/missions/{id}/commands`    | operator command                 |
//! | GET    | `/missions/{id}/report`      | final report (409 while running) |
//! | GET    | `/missions/{id}/stream`      | WebSocket telemetry and events   |
//! | GET    | `/schemas/{name}`            | JSON schemas                     |

pub mod request;
pub mod runner;
pub mod schemas;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use abyss_core::mission::ControlCommand;
use abyss_core::model::DEFAULT_MAX_DEPTH;
use abyss_core::Error;
use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};

use crate::request::{CommandRequest, MissionRequest};
use crate::runner::{CommandMsg, Enqueue, MissionHandle};

pub use crate::request::TimeScale;

pub const DEFAULT_PORT: u16 = 8080;
const COMMAND_TIMEOUT: Duration = Duration::from_secs(30);

/// `ABYSS_PORT`, or 8080.
pub fn port_from_env() -> u16 {
    std::env::var("ABYSS_PORT")
        .ok()
        .and_then(|p| p.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

#[derive(Clone, Default)]
pub struct AppState {
    missions: Arc<RwLock<HashMap<String, Arc<MissionHandle>>>>,
    next_id: Arc<AtomicU64>,
    log_dir: Option<PathBuf>,
}

impl AppState {
    /// Finished missions write their logs under `dir` when given.
    pub fn new(log_dir: Option<PathBuf>) -> Self {
        Self {
            log_dir,
            ..Self::default()
        }
    }

    fn get(&self, id: &str) -> Result<Arc<MissionHandle>, ApiError> {
        self.missions
            .read()
            .expect("mission table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no mission '{id}'")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

/// Planner and comms failures are well-formed requests the fleet cannot fly.
fn classify(e: Error) -> ApiError {
    let status = match e {
        Error::Planning(_) | Error::CommsRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Handler { .. } | Error::Io(_) | Error::Schedule { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    };
    ApiError::new(status, e.to_string())
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/missions", post(create_mission))
        .route("/missions/{id}", get(get_mission))
        .route("/missions/{id}/commands", post(post_command))
        .route("/missions/{id}/report", get(get_report))
        .route("/missions/{id}/stream", get(stream))
        .route("/schemas/{name}", get(get_schema));
    Router::new().nest("/v1", v1).with_state(state)
}

/// Binds and serves until the process ends.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_mission(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: MissionRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let scenario = req.to_scenario().map_err(classify)?;
    let id = format!("m{}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let ready = runner::spawn(id.clone(), scenario, req.seed, req.time_scale, state.log_dir.clone());
    let handle = ready
        .await
        .map_err(|_| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "mission thread died"))?
        .map_err(classify)?;
    let summary = handle.shared.lock().expect("mission state lock").plan_summary.clone();
    state
        .missions
        .write()
        .expect("mission table lock")
        .insert(id.clone(), Arc::new(handle));
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "plan_summary": summary }))).into_response())
}

async fn get_mission(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let m = state.get(&id)?;
    let s = m.shared.lock().expect("mission state lock");
    let latest: Value = serde_json::from_str(&s.latest.text).unwrap_or(Value::Null);
    Ok(Json(json!({
        "id": id,
        "status": s.status,
        "sim_time": s.sim_time,
        "plan_summary": s.plan_summary,
        "telemetry": latest,
        "error": s.error,
    })))
}

async fn post_command(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let m = state.get(&id)?;
    let req = CommandRequest::parse(&body).map_err(|e| ApiError::bad_request(format!("malformed command: {e}")))?;
    match &req.command {
        ControlCommand::Retask { area, .. } => {
            area.validate(DEFAULT_MAX_DEPTH).map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        ControlCommand::AddConstraint { constraint } => {
            constraint.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        }
        _ => {}
    }
    let terminated = || ApiError::new(StatusCode::CONFLICT, format!("mission '{id}' has terminated"));
    if m.shared.lock().expect("mission state lock").status.is_terminal() {
        return Err(terminated());
    }
    let (tx, rx) = oneshot::channel();
    let kind = req.command.name();
    match m.enqueue(CommandMsg {
        command: req.command,
        reply: tx,
    }) {
        Enqueue::Queued => {}
        Enqueue::Full => {
            return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "command queue is full"))
        }
        Enqueue::Closed => return Err(terminated()),
    }
    match tokio::time::timeout(COMMAND_TIMEOUT, rx).await {
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "command not applied in time")),
        Ok(Err(_)) => Err(terminated()),
        Ok(Ok(Err(Error::Argument(msg)))) if msg.contains("terminated") => Err(terminated()),
        Ok(Ok(Err(e))) => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())),
        Ok(Ok(Ok(sim_time))) => Ok((
            StatusCode::ACCEPTED,
            Json(json!({
                "applied": kind,
                "sim_time": sim_time,
                "issued_at": req.issued_at,
            })),
        )
            .into_response()),
    }
}

async fn get_report(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let m = state.get(&id)?;
    let s = m.shared.lock().expect("mission state lock");
    if !s.status.is_terminal() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("mission '{id}' is still running")));
    }
    match (&s.report, &s.error) {
        (_, Some(err)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, err.clone())),
        (Some(r), None) => Ok(Json(r).into_response()),
        (None, None) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "report unavailable")),
    }
}

async fn get_schema(Path(name): Path<String>) -> Result<Json<Value>, ApiError> {
    schemas::schema(&name)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no schema '{name}'")))
}

async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let m = state.get(&id)?;
    Ok(ws.on_upgrade(move |socket| forward(socket, m)))
}

async fn forward(mut socket: WebSocket, mission: Arc<MissionHandle>) {
    let (snapshot, mut rx) = mission.subscribe();
    let t0 = snapshot.time;
    if socket.send(Message::Text(snapshot.text.clone().into())).await.is_err() {
        return;
    }
    if snapshot.terminal {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    loop {
        match rx.recv().await {
            Ok(frame) => {
                if frame.time < t0 {
                    continue;
                }
                if socket.send(Message::Text(frame.text.clone().into())).await.is_err() {
                    return;
                }
                if frame.terminal {
                    break;
                }
            }
            // Slow consumers are dropped rather than allowed to stall the engine.
            Err(broadcast::error::RecvError::Lagged(_)) | Err(broadcast::error::RecvError::Closed) => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
