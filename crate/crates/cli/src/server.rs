//! HTTP front end of the session manager with a server-sent event stream of
//! step deltas.
//!
//! Every response carries `x-schema-version`. Requests may send it too; a
//! mismatch is refused with 400.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use outbreak_core::params::CostConfig;
use outbreak_core::policy::{PolicyKind, StepOverrides};
use outbreak_core::session::{
    Binding, CreateResponse, SessionConfig, SessionDiff, SessionManager, SessionMetrics, SessionSnapshot, StepDelta, SERVICE_SCHEMA_VERSION,
};
use outbreak_core::Error;

pub const SCHEMA_HEADER: &str = "x-schema-version";

/// Messages pushed to stream subscribers.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Notice {
    Step { delta: StepDelta },
    Evicted { session: String },
    Reset { session: String },
}

impl Notice {
    fn session(&self) -> &str {
        match self {
            Notice::Step { delta } => &delta.session,
            Notice::Evicted { session } | Notice::Reset { session } => session,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<SessionManager>,
    pub notices: broadcast::Sender<Notice>,
}

impl AppState {
    pub fn new(manager: SessionManager) -> Self {
        let (notices, _) = broadcast::channel(1024);
        Self {
            manager: Arc::new(manager),
            notices,
        }
    }

    fn notify(&self, n: Notice) {
        // No subscribers is fine.
        let _ = self.notices.send(n);
    }
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Param { .. } | Error::Input(_) | Error::Config(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::State(_) => StatusCode::CONFLICT,
            Error::Resource(_) | Error::Capacity(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let field = match &self.0 {
            Error::Param { field, .. } => Some(field.clone()),
            _ => None,
        };
        (status, Json(json!({ "error": self.0.to_string(), "field": field }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

/// Run blocking manager work on the worker pool.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> outbreak_core::Result<T> + Send + 'static) -> std::result::Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(Error::State(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

/// Limits a client needs to build its controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ServiceInfo {
    pub schema_version: u32,
    pub session_cap: usize,
    pub m_min: f64,
    pub m_max: f64,
    pub policies: Vec<String>,
    pub controller_loaded: bool,
    pub sessions: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepResponse {
    pub delta: StepDelta,
    pub metrics: SessionMetrics,
}

async fn info(State(s): State<AppState>) -> Json<ServiceInfo> {
    let costs = CostConfig::default();
    Json(ServiceInfo {
        schema_version: SERVICE_SCHEMA_VERSION,
        session_cap: s.manager.cap(),
        m_min: costs.m_min,
        m_max: costs.m_max,
        policies: PolicyKind::all().iter().map(|k| k.name().to_string()).chain(["manual".to_string()]).collect(),
        controller_loaded: s.manager.resources().controller.is_some(),
        sessions: s.manager.ids(),
    })
}

async fn create(State(s): State<AppState>, Json(cfg): Json<SessionConfig>) -> ApiResult<CreateResponse> {
    let m = s.manager.clone();
    let r = blocking(move || m.create(cfg)).await?;
    if let Some(v) = &r.evicted {
        s.notify(Notice::Evicted { session: v.clone() });
    }
    Ok(Json(r))
}

async fn step(State(s): State<AppState>, Path(id): Path<String>, body: Option<Json<StepOverrides>>) -> ApiResult<StepResponse> {
    let overrides = body.map(|Json(o)| o).unwrap_or_default();
    let m = s.manager.clone();
    let r = blocking(move || {
        let delta = m.step(&id, overrides)?;
        let metrics = m.metrics(&id)?;
        Ok(StepResponse { delta, metrics })
    })
    .await?;
    s.notify(Notice::Step { delta: r.delta.clone() });
    Ok(Json(r))
}

async fn fork(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<CreateResponse> {
    let m = s.manager.clone();
    let r = blocking(move || m.fork(&id)).await?;
    if let Some(v) = &r.evicted {
        s.notify(Notice::Evicted { session: v.clone() });
    }
    Ok(Json(r))
}

async fn snapshot(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionSnapshot> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.state(&id)).await?))
}

async fn metrics(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionMetrics> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.metrics(&id)).await?))
}

async fn log_entries(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Vec<StepDelta>> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.log(&id)).await?))
}

async fn reset(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionMetrics> {
    let m = s.manager.clone();
    let sid = id.clone();
    let r = blocking(move || {
        m.reset(&sid)?;
        m.metrics(&sid)
    })
    .await?;
    s.notify(Notice::Reset { session: id });
    Ok(Json(r))
}

async fn set_binding(State(s): State<AppState>, Path(id): Path<String>, Json(b): Json<Binding>) -> ApiResult<SessionSnapshot> {
    let m = s.manager.clone();
    Ok(Json(
        blocking(move || {
            m.set_binding(&id, b)?;
            m.state(&id)
        })
        .await?,
    ))
}

async fn diff(State(s): State<AppState>, Path((a, b)): Path<(String, String)>) -> ApiResult<SessionDiff> {
    let m = s.manager.clone();
    Ok(Json(blocking(move || m.diff(&a, &b)).await?))
}

async fn remove(State(s): State<AppState>, Path(id): Path<String>) -> std::result::Result<StatusCode, ApiError> {
    let m = s.manager.clone();
    blocking(move || m.remove(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// Per-session push stream of step deltas, resets and evictions.
async fn events(State(s): State<AppState>, Path(id): Path<String>) -> std::result::Result<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>, ApiError> {
    s.manager.state(&id)?;
    let rx = s.notices.subscribe();
    let stream = stream::unfold((rx, id), |(mut rx, id)| async move {
        loop {
            match rx.recv().await {
                Ok(n) if n.session() == id => {
                    let kind = match &n {
                        Notice::Step { .. } => "step",
                        Notice::Evicted { .. } => "evicted",
                        Notice::Reset { .. } => "reset",
                    };
                    let ev = Event::default().event(kind).json_data(&n).unwrap_or_else(|_| Event::default().event("error"));
                    return Some((Ok(ev), (rx, id)));
                }
                Ok(_) => continue,
                Err(broadcast::error::RecvError::Lagged(k)) => {
                    let ev = Event::default().event("lagged").data(k.to_string());
                    return Some((Ok(ev), (rx, id)));
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn schema_header(req: Request, next: Next) -> Response {
    let expected = SERVICE_SCHEMA_VERSION.to_string();
    if let Some(v) = req.headers().get(SCHEMA_HEADER) {
        if v.to_str().map(|s| s.trim() != expected).unwrap_or(true) {
            let msg = format!("unsupported schema version (server speaks {expected})");
            let mut r = (StatusCode::BAD_REQUEST, Json(json!({ "error": msg, "field": SCHEMA_HEADER }))).into_response();
            r.headers_mut().insert(SCHEMA_HEADER, HeaderValue::from(SERVICE_SCHEMA_VERSION));
            return r;
        }
    }
    let mut r = next.run(req).await;
    r.headers_mut().insert(SCHEMA_HEADER, HeaderValue::from(SERVICE_SCHEMA_VERSION));
    r
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/info", get(info))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(snapshot).delete(remove))
        .route("/v1/sessions/{id}/step", post(step))
        .route("/v1/sessions/{id}/fork", post(fork))
        .route("/v1/sessions/{id}/metrics", get(metrics))
        .route("/v1/sessions/{id}/log", get(log_entries))
        .route("/v1/sessions/{id}/reset", post(reset))
        .route("/v1/sessions/{id}/binding", put(set_binding))
        .route("/v1/sessions/{id}/diff/{other}", get(diff))
        .route("/v1/sessions/{id}/events", get(events))
        .layer(middleware::from_fn(schema_header))
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: &str, state: AppState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
