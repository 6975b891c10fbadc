//! HTTP front end for a live session.
//!
//! ```text
//! GET  /v1/next-batch?size=B[&client=C]   lease up to B selected samples
//! POST /v1/annotations                    {"sample_id", "label"[, "client"]}
//! GET  /v1/status                         counts, gain histogram, stop rule
//! GET  /v1/samples/{id}[?embedding=1]     one sample
//! ```
//!
//! All engine mutations go through one mutex, so they are applied and
//! journaled in a single order. A sample handed out by `next-batch` is
//! leased to the requesting client until the lease expires; expired leases
//! are returned to the pool the next time anyone asks for work.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coevo_core::engine::{Annotation, Outcome, SampleRecord, Stats, StopDiagnostics};
use coevo_core::session::Session;
use coevo_core::{Error, Event, Status};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const TOKEN_HEADER: &str = "x-coevo-token";
pub const DEFAULT_CLIENT: &str = "default";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub lease: Duration,
    /// When set, every request must carry it in `x-coevo-token` or as a
    /// bearer token.
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            lease: Duration::from_secs(600),
            token: None,
        }
    }
}

#[derive(Debug)]
struct Lease {
    client: String,
    issued: u64,
    expires: Instant,
}

struct Inner {
    session: Session,
    leases: HashMap<String, Lease>,
    issued: u64,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    /// Wraps an open session. Samples left selected by an earlier process
    /// have no lease any more and are released first.
    pub fn new(mut session: Session, config: ServiceConfig) -> coevo_core::Result<Self> {
        let engine = session.engine();
        let stale: Vec<String> = (0..engine.len())
            .filter(|&p| engine.status_at(p) == Status::Selected)
            .map(|p| engine.ids()[p].clone())
            .collect();
        if !stale.is_empty() {
            session.apply(Event::Release { ids: stale })?;
        }
        Ok(Self {
            inner: Arc::new(Mutex::new(Inner {
                session,
                leases: HashMap::new(),
                issued: 0,
            })),
            config: Arc::new(config),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/next-batch", get(next_batch))
        .route("/v1/annotations", post(annotate))
        .route("/v1/status", get(status))
        .route("/v1/samples/{id}", get(sample))
        .layer(middleware::from_fn_with_state(state.clone(), authorize))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownId(_) => StatusCode::NOT_FOUND,
            Error::AlreadyAnnotated { .. } => StatusCode::CONFLICT,
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidVector(_)
            | Error::ClassCountMismatch { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": { "code": self.code, "message": self.message } });
        if let Some(serde_json::Value::Object(extra)) = self.extra {
            body.as_object_mut().expect("object").extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_query", r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn authorize(State(state): State<AppState>, headers: HeaderMap, request: Request, next: Next) -> Response {
    let Some(token) = &state.config.token else {
        return next.run(request).await;
    };
    let given = headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .or_else(|| {
            headers
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
        });
    if given == Some(token.as_str()) {
        next.run(request).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong token").into_response()
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct WorkItem {
    pub sample_id: String,
    pub payload_uri: Option<String>,
    pub predicted_class: usize,
    pub alpha: f64,
    pub gain: f64,
    pub class_names: Vec<String>,
    pub lease_expires_in_ms: u64,
}

#[derive(Debug, Deserialize)]
struct BatchQuery {
    size: Option<String>,
    client: Option<String>,
}

impl Inner {
    /// Releases every lease that has run out, journaling the release.
    fn expire(&mut self, now: Instant) -> coevo_core::Result<()> {
        let mut expired: Vec<(u64, String)> = self
            .leases
            .iter()
            .filter(|(_, l)| l.expires <= now)
            .map(|(id, l)| (l.issued, id.clone()))
            .collect();
        if expired.is_empty() {
            return Ok(());
        }
        expired.sort_unstable();
        let ids: Vec<String> = expired.into_iter().map(|(_, id)| id).collect();
        for id in &ids {
            self.leases.remove(id);
        }
        self.session.apply(Event::Release { ids })?;
        Ok(())
    }

    fn work_item(&self, id: &str, now: Instant) -> WorkItem {
        let engine = self.session.engine();
        let position = engine.position(id).expect("leased samples exist");
        let record = engine.record(position);
        let classes = engine.config().num_classes();
        WorkItem {
            sample_id: record.id,
            payload_uri: record.payload_uri,
            predicted_class: engine.predicted_class_at(position),
            alpha: record.state.alpha(),
            gain: record.gain,
            class_names: (0..classes).map(|c| engine.config().class_name(c)).collect(),
            lease_expires_in_ms: self.leases[id].expires.saturating_duration_since(now).as_millis() as u64,
        }
    }
}

async fn next_batch(
    State(state): State<AppState>,
    query: Result<Query<BatchQuery>, QueryRejection>,
) -> ApiResult<Vec<WorkItem>> {
    let Query(q) = query?;
    let mut inner = state.inner.lock();
    let size = match q.size.as_deref() {
        None => inner.session.engine().config().batch_size,
        Some(raw) => match raw.parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "invalid_argument",
                    format!("size must be a positive integer, got {raw:?}"),
                ))
            }
        },
    };
    let client = q.client.unwrap_or_else(|| DEFAULT_CLIENT.to_string());
    let now = Instant::now();
    inner.expire(now)?;

    let mut held: Vec<(u64, String)> = inner
        .leases
        .iter()
        .filter(|(_, l)| l.client == client)
        .map(|(id, l)| (l.issued, id.clone()))
        .collect();
    held.sort_unstable();
    let mut ids: Vec<String> = held.into_iter().map(|(_, id)| id).take(size).collect();

    if ids.len() < size {
        let stop = inner.session.engine().should_stop();
        if stop.stop {
            if ids.is_empty() {
                let mut err = ApiError::new(StatusCode::CONFLICT, "stop", "the stop rule holds");
                err.extra = Some(json!({ "stop": stop, "stats": inner.session.engine().stats() }));
                return Err(err);
            }
        } else {
            let outcome = inner.session.apply(Event::Select {
                requested: size - ids.len(),
                selected: Vec::new(),
            })?;
            let Outcome::Selected(fresh) = outcome else {
                unreachable!("select yields a selection")
            };
            let expires = now + state.config.lease;
            for id in fresh {
                inner.issued += 1;
                let lease = Lease {
                    client: client.clone(),
                    issued: inner.issued,
                    expires,
                };
                inner.leases.insert(id.clone(), lease);
                ids.push(id);
            }
        }
    }
    Ok(Json(ids.iter().map(|id| inner.work_item(id, now)).collect()))
}

#[derive(Debug, Deserialize)]
struct AnnotationBody {
    sample_id: String,
    label: usize,
    client: Option<String>,
}

#[derive(Debug, Serialize)]
struct Summary {
    total: usize,
    unlabeled: usize,
    selected: usize,
    annotated: usize,
    tombstoned: usize,
    annotated_fraction: f64,
}

impl From<&Stats> for Summary {
    fn from(s: &Stats) -> Self {
        Self {
            total: s.total,
            unlabeled: s.unlabeled,
            selected: s.selected,
            annotated: s.annotated,
            tombstoned: s.tombstoned,
            annotated_fraction: s.annotated_fraction,
        }
    }
}

#[derive(Debug, Serialize)]
struct AnnotationResponse {
    sample_id: String,
    sequence: u64,
    rechecked: usize,
    stats: Summary,
    stop: StopDiagnostics,
}

async fn annotate(
    State(state): State<AppState>,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> ApiResult<AnnotationResponse> {
    let Json(body) = body?;
    let mut inner = state.inner.lock();
    let engine = inner.session.engine();
    let position = engine
        .position(&body.sample_id)
        .ok_or_else(|| ApiError::from(Error::UnknownId(body.sample_id.clone())))?;
    let classes = engine.config().num_classes();
    if body.label >= classes {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_argument",
            format!("label {} out of range for {classes} classes", body.label),
        ));
    }
    let record = engine.record(position);
    if record.status == Status::Annotated {
        return Err(Error::AlreadyAnnotated {
            id: record.id,
            sequence: record.annotated_at.unwrap_or(0),
        }
        .into());
    }

    let now = Instant::now();
    match inner.leases.get(&body.sample_id) {
        None => {
            return Err(ApiError::new(
                StatusCode::GONE,
                "lease_missing",
                format!("sample {} is not leased", body.sample_id),
            ))
        }
        Some(lease) if lease.expires <= now => {
            inner.expire(now)?;
            return Err(ApiError::new(
                StatusCode::GONE,
                "lease_expired",
                format!("the lease on {} has expired", body.sample_id),
            ));
        }
        Some(lease) => {
            if let Some(client) = &body.client {
                if *client != lease.client {
                    return Err(ApiError::new(
                        StatusCode::CONFLICT,
                        "leased_elsewhere",
                        format!("sample {} is leased to another client", body.sample_id),
                    ));
                }
            }
        }
    }

    let outcome = inner.session.apply(Event::Annotate(Annotation {
        sample_id: body.sample_id.clone(),
        label: body.label,
        annotator_alpha: None,
    }))?;
    let Outcome::Annotated(report) = outcome else {
        unreachable!("annotate yields a recheck report")
    };
    inner.leases.remove(&body.sample_id);
    let engine = inner.session.engine();
    Ok(Json(AnnotationResponse {
        sample_id: body.sample_id,
        sequence: report.sequence,
        rechecked: report.updated.len(),
        stats: Summary::from(&engine.stats()),
        stop: engine.should_stop(),
    }))
}

#[derive(Debug, Serialize)]
struct StatusResponse {
    stats: Stats,
    stop: StopDiagnostics,
    sequence: u64,
    active_leases: usize,
    class_names: Vec<String>,
}

async fn status(State(state): State<AppState>) -> Json<StatusResponse> {
    let inner = state.inner.lock();
    let engine = inner.session.engine();
    let now = Instant::now();
    Json(StatusResponse {
        stats: engine.stats(),
        stop: engine.should_stop(),
        sequence: engine.sequence(),
        active_leases: inner.leases.values().filter(|l| l.expires > now).count(),
        class_names: (0..engine.config().num_classes())
            .map(|c| engine.config().class_name(c))
            .collect(),
    })
}

#[derive(Debug, Deserialize)]
struct SampleQuery {
    embedding: Option<String>,
}

#[derive(Debug, Serialize)]
struct SampleResponse {
    #[serde(flatten)]
    record: SampleRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
}

async fn sample(
    State(state): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<SampleQuery>, QueryRejection>,
) -> ApiResult<SampleResponse> {
    let Query(q) = query?;
    let inner = state.inner.lock();
    let engine = inner.session.engine();
    let position = engine.position(&id).ok_or(ApiError::from(Error::UnknownId(id)))?;
    let with_embedding = matches!(q.embedding.as_deref(), Some("1" | "true"));
    Ok(Json(SampleResponse {
        record: engine.record(position),
        embedding: with_embedding.then(|| engine.vector_at(position).to_vec()),
    }))
}
