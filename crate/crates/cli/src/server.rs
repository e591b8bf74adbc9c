//! HTTP service hosting live sessions for the operator console.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/sessions` | body: session config, returns `{id}` |
//! | GET | `/api/sessions` | active and finished sessions |
//! | GET | `/api/sessions/{id}/events?from=N` | trace events as JSON lines, from seq N, until the run ends |
//! | GET | `/api/sessions/{id}/pending` | the inquiry awaiting a reply, or `null` |
//! | POST | `/api/sessions/{id}/reply` | body: `{inquiry_id, reply}` |
//! | GET | `/api/sessions/{id}/trace` | every event so far as JSON lines |
//!
//! Everything else is served from the console asset directory. When a token
//! is configured, `/api` requests need `Authorization: Bearer <token>` or
//! `?token=<token>`.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use slotwise_core::ima::{Inquiry, Reply};
use slotwise_core::orchestrator::{Assets, ReplyBroker, ReplyError, Session, SessionConfig, SessionLog};
use tower_http::services::ServeDir;

pub const TOKEN_ENV: &str = "SLOTWISE_TOKEN";

const NDJSON: &str = "application/x-ndjson";
const POLL: Duration = Duration::from_secs(5);

struct Live {
    scenario: String,
    log: Arc<SessionLog>,
    broker: Arc<ReplyBroker>,
}

pub struct AppState {
    assets: Assets,
    token: Option<String>,
    trace_dir: Option<PathBuf>,
    reply_timeout: Option<Duration>,
    sessions: RwLock<BTreeMap<String, Arc<Live>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(assets: Assets) -> Self {
        Self {
            assets,
            token: None,
            trace_dir: None,
            reply_timeout: None,
            sessions: RwLock::default(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Finished traces are written to `<dir>/<session id>.jsonl`.
    pub fn with_trace_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.trace_dir = dir;
        self
    }

    /// How long a session waits for a reply before failing.
    pub fn with_reply_timeout(mut self, t: Option<Duration>) -> Self {
        self.reply_timeout = t;
        self
    }

    fn live(&self, id: &str) -> Result<Arc<Live>, ApiError> {
        self.sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session `{id}`")))
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

    fn bad_request(e: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<ReplyError> for ApiError {
    fn from(e: ReplyError) -> Self {
        let status = match e {
            ReplyError::UnknownInquiry(_) => StatusCode::NOT_FOUND,
            ReplyError::AlreadyAnswered(_) => StatusCode::CONFLICT,
        };
        let code = match e {
            ReplyError::UnknownInquiry(_) => "unknown_inquiry",
            ReplyError::AlreadyAnswered(_) => "already_answered",
        };
        Self::new(status, format!("{code}: {e}"))
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/pending", get(pending))
        .route("/sessions/{id}/reply", post(reply))
        .route("/sessions/{id}/trace", get(trace))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app.fallback(|| async { (StatusCode::NOT_FOUND, "console assets not configured") }),
    }
}

async fn require_token(State(st): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let Some(token) = &st.token else {
        return next.run(req).await;
    };
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let query = req
        .uri()
        .query()
        .into_iter()
        .flat_map(|q| q.split('&'))
        .find_map(|kv| kv.strip_prefix("token="));
    if bearer == Some(token.as_str()) || query == Some(token.as_str()) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong token").into_response()
    }
}

#[derive(Serialize)]
struct Created {
    id: String,
}

async fn create(
    State(st): State<Arc<AppState>>,
    Json(cfg): Json<SessionConfig>,
) -> Result<impl IntoResponse, ApiError> {
    let scenario = st.assets.load_scenario(&cfg.scenario).map_err(ApiError::bad_request)?;
    let backend = st
        .assets
        .backend(&cfg.backend, &scenario)
        .map_err(ApiError::bad_request)?;
    let knowledge = st.assets.knowledge().map_err(ApiError::bad_request)?;
    let log = SessionLog::new();
    let broker = Arc::new(ReplyBroker::new(st.reply_timeout));
    let session = Session::new(
        scenario.clone(),
        cfg.instruction.clone(),
        cfg.run.clone(),
        backend,
        knowledge,
        Box::new(broker.clone()),
        Some(log.clone()),
    )
    .map_err(ApiError::bad_request)?;

    let id = format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed));
    st.sessions.write().expect("session table").insert(
        id.clone(),
        Arc::new(Live {
            scenario: scenario.name.clone(),
            log,
            broker,
        }),
    );
    let out = st.trace_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")));
    let sid = id.clone();
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || {
            let trace = session.run();
            tracing::info!(session = %sid, status = ?trace.status(), "session finished");
            if let Some(p) = out {
                if let Err(e) = trace.save(&p) {
                    tracing::warn!(session = %sid, "cannot save trace: {e}");
                }
            }
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn list(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let table = st.sessions.read().expect("session table");
    let rows: Vec<_> = table
        .iter()
        .map(|(id, l)| {
            let (events, done) = l.log.read_from(0);
            json!({ "id": id, "scenario": l.scenario, "events": events.len(), "done": done })
        })
        .collect();
    Json(json!(rows))
}

#[derive(Deserialize)]
struct FromSeq {
    #[serde(default)]
    from: u64,
}

async fn events(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FromSeq>,
) -> Result<Response, ApiError> {
    let log = st.live(&id)?.log.clone();
    let stream = futures::stream::unfold(Some((log, q.from)), |state| async move {
        let (log, from) = state?;
        let l = log.clone();
        let (batch, done) = tokio::task::spawn_blocking(move || l.wait_from(from, POLL))
            .await
            .ok()?;
        let next = from + batch.len() as u64;
        let body: String = batch.iter().map(|e| e.to_line() + "\n").collect();
        // wait_from returns everything from `from` on, so a finished log is drained here
        let state = (!done).then_some((log, next));
        Some((Ok::<_, Infallible>(Bytes::from(body)), state))
    });
    Ok(([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(stream)).into_response())
}

async fn pending(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Option<Inquiry>>, ApiError> {
    Ok(Json(st.live(&id)?.broker.pending()))
}

#[derive(Deserialize)]
struct ReplyBody {
    inquiry_id: String,
    reply: Reply,
}

async fn reply(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<ReplyBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    st.live(&id)?.broker.submit(&body.inquiry_id, body.reply)?;
    Ok(Json(json!({ "ok": true })))
}

async fn trace(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let live = st.live(&id)?;
    let (events, done) = live.log.read_from(0);
    let body: String = events.iter().map(|e| e.to_line() + "\n").collect();
    Ok((
        [
            (header::CONTENT_TYPE, NDJSON),
            (
                header::HeaderName::from_static("x-session-done"),
                if done { "true" } else { "false" },
            ),
        ],
        body,
    )
        .into_response())
}
