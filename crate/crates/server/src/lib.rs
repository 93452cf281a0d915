//! HTTP service exposing tokenization, tracing, neuron detail and head
//! summaries.
//!
//! | route              | method | body                                          |
//! |--------------------|--------|-----------------------------------------------|
//! | `/api/health`      | GET    |                                               |
//! | `/api/model`       | GET    |                                               |
//! | `/api/trace`       | POST   | `{text, text_b?, include_qk?}`                |
//! | `/api/neuron`      | POST   | `{text, text_b?, layer, head, token_index}`   |
//! | `/api/heads`       | POST   | `{text, text_b?}`                             |
//!
//! Every body, success or error, is canonical JSON. Errors are
//! `{"detail": ..., "error": code}`.

mod workbench;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use attnscope::wire::error_json;
use attnscope::Error;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub use workbench::Workbench;

/// Shared handler state. The workbench is set once; until then every
/// route answers 503.
#[derive(Clone, Default)]
pub struct AppState {
    workbench: Arc<OnceLock<Workbench>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ready(workbench: Workbench) -> Self {
        let state = Self::new();
        state.install(workbench);
        state
    }

    /// Returns false if a workbench was already installed.
    pub fn install(&self, workbench: Workbench) -> bool {
        self.workbench.set(workbench).is_ok()
    }

    fn get(&self) -> Result<&Workbench, ApiError> {
        self.workbench.get().ok_or(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            code: "not_ready",
            detail: "model is still loading".into(),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Input(_) | Error::Mode(_) => StatusCode::BAD_REQUEST,
            Error::Length { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            Error::Bounds { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            detail: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, error_json(self.code, &self.detail))
    }
}

fn json_response(status: StatusCode, body: Vec<u8>) -> Response {
    (
        status,
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/json"),
        )],
        body,
    )
        .into_response()
}

fn ok(body: Vec<u8>) -> Response {
    json_response(StatusCode::OK, body)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        code: "malformed_json",
        detail: e.to_string(),
    })
}

#[derive(Debug, Deserialize)]
struct TraceRequest {
    text: String,
    #[serde(default)]
    text_b: Option<String>,
    #[serde(default)]
    include_qk: bool,
}

#[derive(Debug, Deserialize)]
struct NeuronRequest {
    text: String,
    #[serde(default)]
    text_b: Option<String>,
    layer: usize,
    head: usize,
    token_index: usize,
}

#[derive(Debug, Deserialize)]
struct HeadsRequest {
    text: String,
    #[serde(default)]
    text_b: Option<String>,
}

async fn health(State(state): State<AppState>) -> Result<Response, ApiError> {
    state.get()?;
    Ok(ok(br#"{"status":"ok"}"#.to_vec()))
}

async fn model(State(state): State<AppState>) -> Result<Response, ApiError> {
    Ok(ok(state.get()?.descriptor()))
}

async fn trace(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let wb = state.get()?;
    let req: TraceRequest = parse(&body)?;
    Ok(ok(wb.trace(
        &req.text,
        req.text_b.as_deref(),
        req.include_qk,
    )?))
}

async fn neuron(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let wb = state.get()?;
    let req: NeuronRequest = parse(&body)?;
    Ok(ok(wb.neuron(
        &req.text,
        req.text_b.as_deref(),
        req.layer,
        req.head,
        req.token_index,
    )?))
}

async fn heads(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let wb = state.get()?;
    let req: HeadsRequest = parse(&body)?;
    Ok(ok(wb.heads(&req.text, req.text_b.as_deref())?))
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/model", get(model))
        .route("/api/trace", post(trace))
        .route("/api/neuron", post(neuron))
        .route("/api/heads", post(heads))
        .with_state(state);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors)
}

/// Serves until ctrl-c.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, "listening");
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
