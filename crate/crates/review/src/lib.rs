//! HTTP front end for the expert review queue.
//!
//! Routes:
//! - `GET  /runs/{id}/pending?domain=&offset=&limit=`
//! - `POST /runs/{id}/decisions`
//! - `GET  /runs/{id}/summary`
//!
//! Anything else falls through to the static UI bundle when one is mounted.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use mirage_core::domain::{Decision, Domain, RejectReason, ReviewDecision, TaskId};
use mirage_core::review::{PendingFilter, ReviewDesk, ReviewError};
use mirage_core::store::{RunStore, StoreError};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

/// Environment variable holding the optional shared reviewer token.
pub const TOKEN_ENV: &str = "MIRAGE_REVIEW_TOKEN";

#[derive(Debug, Clone, Default)]
pub struct ServiceOptions {
    /// Directory with the built UI bundle, served at `/`.
    pub ui_dir: Option<PathBuf>,
    /// Origin allowed by CORS. `None` allows any origin.
    pub ui_origin: Option<String>,
    /// When set, `/runs` requests must carry `Authorization: Bearer <token>`.
    pub token: Option<String>,
}

impl ServiceOptions {
    /// Reads the token from the environment.
    pub fn from_env() -> Self {
        ServiceOptions {
            token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ..ServiceOptions::default()
        }
    }
}

/// Open review desks, one per run, created on first use.
#[derive(Clone)]
pub struct Desks {
    store: RunStore,
    open: Arc<Mutex<HashMap<String, Arc<ReviewDesk>>>>,
}

impl Desks {
    pub fn new(store: RunStore) -> Self {
        Desks {
            store,
            open: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn get(&self, run_id: &str) -> Result<Arc<ReviewDesk>, ApiError> {
        let mut open = self.open.lock().expect("desk map poisoned");
        if let Some(desk) = open.get(run_id) {
            return Ok(desk.clone());
        }
        let desk = Arc::new(ReviewDesk::open(&self.store, run_id)?);
        open.insert(run_id.to_string(), desk.clone());
        Ok(desk)
    }

    /// Installs an already-open desk, for callers that hold the run lock.
    pub fn insert(&self, desk: ReviewDesk) -> Arc<ReviewDesk> {
        let desk = Arc::new(desk);
        self.open
            .lock()
            .expect("desk map poisoned")
            .insert(desk.run_id(), desk.clone());
        desk
    }
}

#[derive(Debug)]
pub struct ApiError(pub ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            ReviewError::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            ReviewError::UnknownTask(_) => (StatusCode::NOT_FOUND, "unknown_task"),
            ReviewError::MalformedDecision(_) => (StatusCode::BAD_REQUEST, "malformed_decision"),
            ReviewError::Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
            ReviewError::Store(StoreError::BadRunId(_)) => (StatusCode::NOT_FOUND, "unknown_run"),
            ReviewError::Store(StoreError::Locked(_)) => (StatusCode::SERVICE_UNAVAILABLE, "run_locked"),
            ReviewError::Store(_) | ReviewError::State(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = json!({ "error": code, "message": self.0.to_string() });
        if let ReviewError::Conflict { existing } = &self.0 {
            body["existing"] = json!(existing);
        }
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct PendingQuery {
    domain: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

/// Body of `POST /runs/{id}/decisions`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionBody {
    pub task_id: TaskId,
    pub decision: Decision,
    #[serde(default)]
    pub reason: Option<RejectReason>,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    /// Fail with 409 instead of overwriting an existing decision.
    #[serde(default)]
    pub if_pending: bool,
}

impl DecisionBody {
    fn into_decision(self) -> (ReviewDecision, bool) {
        (
            ReviewDecision {
                task_id: self.task_id,
                decision: self.decision,
                reason: self.reason.unwrap_or(RejectReason::None),
                reviewer: self.reviewer.unwrap_or_default(),
                timestamp: self.timestamp.unwrap_or_else(Utc::now),
            },
            self.if_pending,
        )
    }
}

async fn pending(
    State(desks): State<Desks>,
    Path(run_id): Path<String>,
    Query(q): Query<PendingQuery>,
) -> Result<Response, ApiError> {
    let domain = match q.domain.as_deref().filter(|d| !d.is_empty()) {
        None => None,
        Some(d) => match serde_json::from_value::<Domain>(json!(d.to_ascii_lowercase())) {
            Ok(d) => Some(d),
            Err(_) => {
                let body = json!({ "error": "bad_query", "message": format!("unknown domain `{d}`") });
                return Ok((StatusCode::BAD_REQUEST, Json(body)).into_response());
            }
        },
    };
    let desk = desks.get(&run_id)?;
    let page = desk.pending(&PendingFilter {
        domain,
        offset: q.offset.unwrap_or(0),
        limit: q.limit,
    });
    Ok(Json(page).into_response())
}

async fn decide(State(desks): State<Desks>, Path(run_id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let desk = desks.get(&run_id)?;
    let parsed: DecisionBody = serde_json::from_slice(&body)
        .map_err(|e| ReviewError::MalformedDecision(format!("invalid body: {e}")))?;
    let (decision, if_pending) = parsed.into_decision();
    let ack = tokio::task::spawn_blocking(move || desk.decide(decision, if_pending))
        .await
        .expect("decision task panicked")?;
    Ok((StatusCode::OK, Json(ack)).into_response())
}

async fn summary(State(desks): State<Desks>, Path(run_id): Path<String>) -> Result<Response, ApiError> {
    let desk = desks.get(&run_id)?;
    Ok(Json(desk.summary()).into_response())
}

async fn require_token(State(token): State<Option<Arc<str>>>, req: Request, next: Next) -> Response {
    if let Some(token) = token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(&*token) {
            let body = json!({ "error": "unauthorized", "message": "missing or wrong reviewer token" });
            return (StatusCode::UNAUTHORIZED, Json(body)).into_response();
        }
    }
    next.run(req).await
}

/// The full service: API routes, token check, CORS and the UI mount.
pub fn router(desks: Desks, opts: &ServiceOptions) -> Router {
    let token: Option<Arc<str>> = opts.token.as_deref().map(Arc::from);
    let api = Router::new()
        .route("/runs/{id}/pending", get(pending))
        .route("/runs/{id}/decisions", post(decide))
        .route("/runs/{id}/summary", get(summary))
        .with_state(desks)
        .layer(middleware::from_fn_with_state(token, require_token));

    let origin = match opts.ui_origin.as_deref().and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods(Any)
        .allow_headers(Any);

    let app = match &opts.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: &str, desks: Desks, opts: &ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(desks, opts)).await
}
