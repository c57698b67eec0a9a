//! JSON API over an immutable SEM and trace.

use std::collections::BTreeMap;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;

use perfce_core::params::Sem;
use perfce_core::{Dataset, Error as CoreError, Segment};

use crate::error::{error_kind, CliError};
use crate::ops::{diagnose, render_json, what_if};

/// Longest series returned by `/api/series`.
pub const MAX_SERIES_POINTS: usize = 2000;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub port: u16,
    pub bind: IpAddr,
    pub static_dir: Option<PathBuf>,
    /// Concurrent diagnosis and what-if computations.
    pub workers: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            bind: IpAddr::from([127, 0, 0, 1]),
            static_dir: None,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceState {
    pub sem: Option<Sem>,
    pub trace: Option<Dataset>,
    pub config: ServeConfig,
}

#[derive(Clone)]
struct AppState {
    inner: Arc<ServiceState>,
    pool: Arc<Semaphore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiCode {
    NotFound,
    BadRequest,
    NotReady,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ApiCode,
    pub message: String,
    #[serde(default)]
    pub detail: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub error: ApiError,
}

impl ApiError {
    fn new(code: ApiCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: BTreeMap::new(),
        }
    }

    fn not_ready(what: &str) -> Self {
        Self::new(ApiCode::NotReady, format!("no {what} loaded; start the service with --{what}"))
    }

    fn status(&self) -> StatusCode {
        match self.code {
            ApiCode::NotFound => StatusCode::NOT_FOUND,
            ApiCode::BadRequest => StatusCode::BAD_REQUEST,
            ApiCode::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ApiCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::UnknownNode(_) => ApiCode::NotFound,
            CoreError::NotAnAncestor { .. }
            | CoreError::NotAncestors { .. }
            | CoreError::InvalidArgument(_)
            | CoreError::UnquantifiedEdge { .. } => ApiCode::BadRequest,
            _ => ApiCode::Internal,
        };
        let mut err = ApiError::new(code, e.to_string());
        err.detail.insert("kind".into(), error_kind(&e).into());
        match &e {
            CoreError::NotAnAncestor { candidate, .. } => {
                err.detail.insert("candidates".into(), vec![candidate.clone()].into());
            }
            CoreError::NotAncestors { candidates, .. } => {
                err.detail.insert("candidates".into(), candidates.clone().into());
            }
            CoreError::UnquantifiedEdge { parent, child } => {
                err.detail.insert("edge".into(), vec![parent.clone(), child.clone()].into());
            }
            _ => {}
        }
        err
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(ApiCode::BadRequest, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(ApiCode::BadRequest, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        json_response(status, render_json(&ApiErrorBody { error: self }))
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn ok_json<T: Serialize>(value: &T) -> Response {
    json_response(StatusCode::OK, render_json(value))
}

impl AppState {
    fn sem(&self) -> Result<&Sem, ApiError> {
        self.inner.sem.as_ref().ok_or_else(|| ApiError::not_ready("sem"))
    }

    fn trace(&self) -> Result<&Dataset, ApiError> {
        self.inner.trace.as_ref().ok_or_else(|| ApiError::not_ready("data"))
    }

    /// Runs `f` on the blocking pool once a worker permit is free.
    async fn compute<T, F>(&self, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&ServiceState) -> Result<T, CoreError> + Send + 'static,
    {
        let permit = self
            .pool
            .clone()
            .acquire_owned()
            .await
            .map_err(|e| ApiError::new(ApiCode::Internal, e.to_string()))?;
        let inner = self.inner.clone();
        let out = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            f(&inner)
        })
        .await
        .map_err(|e| ApiError::new(ApiCode::Internal, e.to_string()))?;
        Ok(out?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoseRequest {
    pub target: String,
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub target: String,
    #[serde(default)]
    pub window: Option<Window>,
    pub interventions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesQuery {
    pub kpi: String,
    pub from: Option<usize>,
    pub to: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesView {
    pub kpi: String,
    pub from: usize,
    pub to: usize,
    /// Every `stride`-th row of `from..to` is returned.
    pub stride: usize,
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    /// Labeled segments overlapping the range, clipped to it.
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeView {
    pub parent: String,
    pub child: String,
    /// `None` when the edge is fitted.
    pub unquantified: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphView {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeView>,
    pub chaos_variables: Vec<String>,
    pub baseline_means: BTreeMap<String, f64>,
}

fn window_of(w: Option<Window>) -> Option<(usize, usize)> {
    w.map(|w| (w.from, w.to))
}

async fn kpis(State(s): State<AppState>) -> Result<Response, ApiError> {
    Ok(ok_json(&s.trace()?.columns()))
}

async fn graph(State(s): State<AppState>) -> Result<Response, ApiError> {
    let sem = s.sem()?;
    let unq: BTreeMap<(String, String), String> = sem
        .unquantified_edges()
        .into_iter()
        .map(|(p, c, r)| ((p, c), r))
        .collect();
    let edges = sem
        .graph
        .edges()
        .map(|(p, c)| EdgeView {
            parent: p.to_string(),
            child: c.to_string(),
            unquantified: unq.get(&(p.to_string(), c.to_string())).cloned(),
        })
        .collect();
    Ok(ok_json(&GraphView {
        nodes: sem.graph.nodes().to_vec(),
        edges,
        chaos_variables: sem.chaos_variables.iter().cloned().collect(),
        baseline_means: sem.baseline_means.clone(),
    }))
}

pub fn series_view(data: &Dataset, kpi: &str, from: Option<usize>, to: Option<usize>) -> Result<SeriesView, ApiError> {
    let col = data.column_index(kpi)?;
    let n = data.n_rows();
    let (from, to) = (from.unwrap_or(0), to.unwrap_or(n).min(n));
    if from > to {
        return Err(ApiError::new(ApiCode::BadRequest, format!("from {from} is after to {to}")));
    }
    let len = to - from;
    let stride = len.div_ceil(MAX_SERIES_POINTS).max(1);
    let rows: Vec<usize> = (from..to).step_by(stride).collect();
    let period = data.sample_period_s();
    let segments = data
        .segments()
        .iter()
        .filter(|s| s.start < to && s.end > from)
        .map(|s| Segment {
            start: s.start.max(from),
            end: s.end.min(to),
            kind: s.kind.clone(),
        })
        .collect();
    Ok(SeriesView {
        kpi: kpi.to_string(),
        from,
        to,
        stride,
        timestamps: rows.iter().map(|&r| r as f64 * period).collect(),
        values: rows.iter().map(|&r| data.value(r, col)).collect(),
        segments,
    })
}

async fn series(
    State(s): State<AppState>,
    q: Result<Query<SeriesQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    Ok(ok_json(&series_view(s.trace()?, &q.kpi, q.from, q.to)?))
}

async fn diagnose_handler(
    State(s): State<AppState>,
    body: Result<Json<DiagnoseRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    s.sem()?;
    s.trace()?;
    let out = s
        .compute(move |st| {
            let (sem, data) = (st.sem.as_ref().expect("checked"), st.trace.as_ref().expect("checked"));
            diagnose(sem, data, &req.target, window_of(req.window), req.top_k)
        })
        .await?;
    Ok(ok_json(&out))
}

async fn whatif_handler(
    State(s): State<AppState>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    s.sem()?;
    s.trace()?;
    let out = s
        .compute(move |st| {
            let (sem, data) = (st.sem.as_ref().expect("checked"), st.trace.as_ref().expect("checked"));
            what_if(sem, data, &req.target, window_of(req.window), &req.interventions, false)
        })
        .await?;
    Ok(ok_json(&out))
}

pub fn router(state: ServiceState) -> Router {
    let static_dir = state.config.static_dir.clone();
    let app = AppState {
        pool: Arc::new(Semaphore::new(state.config.workers.max(1))),
        inner: Arc::new(state),
    };
    let api = Router::new()
        .route("/api/kpis", get(kpis))
        .route("/api/graph", get(graph))
        .route("/api/series", get(series))
        .route("/api/diagnose", post(diagnose_handler))
        .route("/api/whatif", post(whatif_handler))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: ServiceState) -> Result<(), CliError> {
    let addr = SocketAddr::new(state.config.bind, state.config.port);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::Bind {
        addr: addr.to_string(),
        message: e.to_string(),
    })?;
    eprintln!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Load(e.to_string()))
}
