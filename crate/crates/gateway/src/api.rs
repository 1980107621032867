//! HTTP and WebSocket routes.

use std::collections::HashMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use swarmfield_core::metrics::RunReport;
use swarmfield_core::planner::{Command, HttpChatTransport, LlmPlanner, OraclePlanner, Planner};
use swarmfield_core::runner::{run_scenario, RunOptions};
use swarmfield_core::scenario::{builtin, Scenario, ScenarioError, BUILTIN_SCENARIOS};
use swarmfield_core::sim::SimConfig;
use swarmfield_core::WaypointPlan;
use tokio::net::TcpListener;
use tokio::sync::broadcast::{self, error::RecvError};

use crate::config::{GatewayConfig, Mode};
use crate::live::{Frame, LiveSession, RunStatus};

/// Frames buffered per subscriber before the oldest are dropped.
const STREAM_BUFFER: usize = 64;
const IDLE_STATUS_PERIOD: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub error: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        Self { status, error, message: message.into() }
    }

    fn idle() -> Self {
        Self::new(StatusCode::CONFLICT, "SessionIdle", "no session is running")
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "InvalidRequest", message)
    }
}

impl From<ScenarioError> for ApiError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Unknown(_) => Self::new(StatusCode::NOT_FOUND, "UnknownScenario", e.to_string()),
            other => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "InvalidScenario", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// A built-in scenario name or an inline scenario document.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Name(String),
    Inline(Box<Scenario>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBody {
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub agents: Option<usize>,
}

impl ScenarioBody {
    fn resolve(self) -> Result<Scenario, ScenarioError> {
        match self.scenario {
            ScenarioRef::Name(name) => builtin(&name, self.agents),
            ScenarioRef::Inline(s) => {
                let mut s = *s;
                if let Some(n) = self.agents {
                    s.n_agents = n;
                }
                s.validate()?;
                Ok(s)
            }
        }
    }
}

/// `GET /api/session`.
#[derive(Debug, Clone, Serialize)]
pub struct SessionState {
    pub session_id: Option<String>,
    pub mode: Mode,
    pub run_status: RunStatus,
    pub scenario: Option<String>,
    pub config: Option<SimConfig>,
    pub plan: Option<WaypointPlan>,
    pub tick: Option<u64>,
    pub sim_time: Option<f64>,
    pub planning: bool,
}

#[derive(Debug, Clone, Serialize)]
struct StatusFrame<'a> {
    r#type: &'static str,
    session_id: Option<&'a str>,
    run_status: RunStatus,
}

enum RunSlot {
    Running,
    Done(Box<RunReport>),
    Failed(String),
}

pub struct AppState {
    config: GatewayConfig,
    live: Mutex<Option<LiveSession>>,
    runs: Mutex<HashMap<String, RunSlot>>,
    frames: broadcast::Sender<Frame>,
    counter: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    fn next_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.counter.fetch_add(1, Ordering::Relaxed) + 1)
    }

    fn planner(&self) -> Box<dyn Planner> {
        match (self.config.mode, &self.config.llm) {
            (Mode::Llm, Some(endpoint)) => Box::new(LlmPlanner::new(HttpChatTransport::new(endpoint.clone()))),
            _ => Box::new(OraclePlanner),
        }
    }

    fn planner_label(&self) -> &'static str {
        match self.config.mode {
            Mode::Oracle => "oracle",
            Mode::Llm => "llm",
        }
    }

    fn session_state(&self) -> SessionState {
        let live = lock(&self.live);
        match live.as_ref() {
            None => SessionState {
                session_id: None,
                mode: self.config.mode,
                run_status: RunStatus::Idle,
                scenario: None,
                config: None,
                plan: None,
                tick: None,
                sim_time: None,
                planning: false,
            },
            Some(s) => {
                let view = s.view();
                SessionState {
                    session_id: Some(s.id().to_string()),
                    mode: self.config.mode,
                    run_status: view.run_status,
                    scenario: Some(s.scenario().name.clone()),
                    config: Some(s.scenario().config(true)),
                    plan: Some(view.plan),
                    tick: Some(view.tick),
                    sim_time: Some(view.sim_time),
                    planning: view.planning,
                }
            }
        }
    }

    fn status_frame(&self) -> Frame {
        let state = self.session_state();
        let body =
            StatusFrame { r#type: "status", session_id: state.session_id.as_deref(), run_status: state.run_status };
        let tick_rate = state.config.map_or(20.0, |c| c.params.tick_rate());
        Frame::new(None, tick_rate, &body)
    }

    /// Replaces the live session; the old one is stopped off the async runtime.
    async fn replace_session(&self, next: Option<LiveSession>) {
        let old = std::mem::replace(&mut *lock(&self.live), next);
        if let Some(old) = old {
            let _ = tokio::task::spawn_blocking(move || old.stop()).await;
        }
        let _ = self.frames.send(self.status_frame());
    }

    fn start_session(&self, scenario: Scenario) -> ApiResult<LiveSession> {
        LiveSession::start(self.next_id("session"), scenario, self.planner(), self.frames.clone())
            .map_err(|e| ScenarioError::from(e).into())
    }
}

/// A configured gateway, ready to serve.
pub struct Gateway {
    state: Arc<AppState>,
}

impl Gateway {
    /// Starts the autostart session, if one is configured.
    pub fn new(config: GatewayConfig) -> Result<Self, ScenarioError> {
        let (frames, _) = broadcast::channel(STREAM_BUFFER);
        let autostart = config.autostart.clone();
        let agents = config.agents;
        let state = Arc::new(AppState {
            config,
            live: Mutex::new(None),
            runs: Mutex::new(HashMap::new()),
            frames,
            counter: AtomicU64::new(0),
        });
        if let Some(name) = autostart {
            let scenario = builtin(&name, agents)?;
            let session =
                LiveSession::start(state.next_id("session"), scenario, state.planner(), state.frames.clone())?;
            *lock(&state.live) = Some(session);
        }
        Ok(Self { state })
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    /// Serves until `shutdown` resolves, then stops the live session.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        let state = self.state.clone();
        let idle = tokio::spawn(idle_status(state.clone()));
        let result = axum::serve(listener, self.router()).with_graceful_shutdown(shutdown).await;
        idle.abort();
        state.replace_session(None).await;
        result
    }
}

/// Idle gateways still emit a status frame every second.
async fn idle_status(state: Arc<AppState>) {
    let mut interval = tokio::time::interval(IDLE_STATUS_PERIOD);
    loop {
        interval.tick().await;
        if lock(&state.live).is_none() {
            let _ = state.frames.send(state.status_frame());
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/command", post(command))
        .route("/api/session", get(get_session).post(post_session).delete(delete_session))
        .route("/api/scenario", post(post_scenario))
        .route("/api/scenarios", get(list_scenarios))
        .route("/api/report/{handle}", get(get_report))
        .route("/api/stream", get(stream))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// With a token configured, every request needs `Authorization: Bearer <token>`
/// or, for browsers opening a WebSocket, `?token=<token>`.
async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(token) = state.config.token.as_deref() else {
        return next.run(req).await;
    };
    let bearer =
        req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer "));
    let query = Query::<HashMap<String, String>>::try_from_uri(req.uri()).ok();
    let from_query = query.as_ref().and_then(|q| q.get("token")).map(String::as_str);
    if bearer == Some(token) || from_query == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong token").into_response()
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8], error: &'static str) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, error, e.to_string()))
}

async fn command(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let command: Command = parse_json(&body, "InvalidCommand")?;
    let reply = {
        let live = lock(&state.live);
        let session = live.as_ref().ok_or_else(ApiError::idle)?;
        session.submit(command).map_err(|_| ApiError::idle())?
    };
    let summary = reply.await.map_err(|_| ApiError::idle())?;
    Ok(Json(summary).into_response())
}

async fn get_session(State(state): State<Arc<AppState>>) -> Json<SessionState> {
    Json(state.session_state())
}

async fn post_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: ScenarioBody = parse_json(&body, "InvalidRequest")?;
    let scenario = body.resolve()?;
    let session = state.start_session(scenario)?;
    state.replace_session(Some(session)).await;
    Ok((StatusCode::CREATED, Json(state.session_state())).into_response())
}

async fn delete_session(State(state): State<Arc<AppState>>) -> Json<SessionState> {
    state.replace_session(None).await;
    Json(state.session_state())
}

#[derive(Debug, Serialize)]
struct RunHandle {
    handle: String,
    scenario: String,
    status: &'static str,
}

async fn post_scenario(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: ScenarioBody = parse_json(&body, "InvalidRequest")?;
    let scenario = body.resolve()?;
    let handle = state.next_id("run");
    lock(&state.runs).insert(handle.clone(), RunSlot::Running);
    let planner = state.planner();
    let options = RunOptions { realtime: false, planner_label: state.planner_label().into() };
    let (worker_state, worker_handle, worker_scenario) = (state.clone(), handle.clone(), scenario.clone());
    tokio::task::spawn_blocking(move || {
        let slot = match run_scenario(&worker_scenario, planner, &options, None) {
            Ok(out) => RunSlot::Done(Box::new(out.report)),
            Err(e) => RunSlot::Failed(e.to_string()),
        };
        lock(&worker_state.runs).insert(worker_handle, slot);
    });
    let body = RunHandle { handle, scenario: scenario.name, status: "running" };
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn list_scenarios() -> Json<&'static [&'static str]> {
    Json(BUILTIN_SCENARIOS)
}

async fn get_report(State(state): State<Arc<AppState>>, Path(handle): Path<String>) -> ApiResult<Response> {
    let runs = lock(&state.runs);
    match runs.get(&handle) {
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownHandle", format!("no run {handle:?}"))),
        Some(RunSlot::Running) => {
            let body = serde_json::json!({ "handle": handle, "status": "running" });
            Ok((StatusCode::ACCEPTED, Json(body)).into_response())
        }
        Some(RunSlot::Done(report)) => Ok(Json(report.as_ref()).into_response()),
        Some(RunSlot::Failed(message)) => {
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RunFailed", message.clone()))
        }
    }
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    /// Maximum state frames per second; defaults to the tick rate.
    rate: Option<f64>,
}

async fn stream(
    State(state): State<Arc<AppState>>,
    Query(query): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    if let Some(rate) = query.rate {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ApiError::bad_request(format!("rate must be > 0, got {rate}")));
        }
    }
    // Subscribe before the upgrade so no frame after this point is missed.
    let frames = state.frames.subscribe();
    let hello = state.status_frame();
    Ok(ws.on_upgrade(move |socket| pump(socket, frames, hello, query.rate)))
}

/// Ticks between delivered state frames for a subscriber limited to `rate` Hz.
pub fn stride(tick_rate: f64, rate: Option<f64>) -> u64 {
    match rate {
        Some(r) if r < tick_rate => (tick_rate / r - 1e-9).ceil() as u64,
        _ => 1,
    }
}

async fn pump(mut socket: WebSocket, mut frames: broadcast::Receiver<Frame>, hello: Frame, rate: Option<f64>) {
    if socket.send(Message::Text(hello.json)).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            frame = frames.recv() => match frame {
                Ok(frame) => {
                    let due = frame.tick.is_none_or(|t| t % stride(frame.tick_rate, rate) == 0);
                    if due && socket.send(Message::Text(frame.json)).await.is_err() {
                        return;
                    }
                }
                // A slow client misses frames; the loop never waits for it.
                Err(RecvError::Lagged(n)) => tracing::debug!("subscriber dropped {n} frames"),
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
