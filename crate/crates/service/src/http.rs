//! JSON-over-HTTP API. Engine calls run on the blocking pool, at most
//! `workers` at a time.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{Any, CorsLayer};
use tower_http::trace::TraceLayer;

use crate::engine::{Engine, ExplainRequest, PredictRequest};
use crate::error::{Result, ServiceError};

/// Response header carrying the explanation's cache key.
pub const KEY_HEADER: &str = "x-explanation-key";
/// Response header set to `hit` or `miss`.
pub const CACHE_HEADER: &str = "x-explanation-cache";

#[derive(Clone)]
struct AppState {
    engine: Arc<Engine>,
    pool: Arc<Semaphore>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(self.record())).into_response()
    }
}

/// The service router with permissive CORS and request tracing.
pub fn router(engine: Engine, workers: usize) -> Router {
    let state = AppState {
        engine: Arc::new(engine),
        pool: Arc::new(Semaphore::new(workers.max(1))),
    };
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([
            header::HeaderName::from_static(KEY_HEADER),
            header::HeaderName::from_static(CACHE_HEADER),
        ]);
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/graph", get(graph))
        .route("/datasets/{id}/instances", get(instances))
        .route("/explain", post(explain))
        .route("/predict", post(predict))
        .layer(cors)
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves `router` on `addr` until Ctrl-C.
pub async fn serve(router: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn run<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce(&Engine) -> Result<T> + Send + 'static,
) -> Result<T> {
    let _permit = state
        .pool
        .clone()
        .acquire_owned()
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    let engine = state.engine.clone();
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))
}

fn json<T: Serialize>(value: Result<T>) -> Response {
    match value {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn list_datasets(State(state): State<AppState>) -> Response {
    json(run(&state, |e| e.datasets()).await)
}

async fn graph(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    json(run(&state, move |e| e.graph_view(&id)).await)
}

#[derive(Deserialize)]
struct InstanceQuery {
    /// Comma-separated label ids or names.
    #[serde(default)]
    label: Option<String>,
}

async fn instances(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<InstanceQuery>,
) -> Response {
    let labels: Vec<String> = q
        .label
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect();
    json(run(&state, move |e| e.instances(&id, &labels)).await)
}

async fn explain(State(state): State<AppState>, body: Bytes) -> Response {
    let req: ExplainRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match run(&state, move |e| e.explain(&req)).await {
        Ok(out) => {
            let mut res = (
                [(
                    header::CONTENT_TYPE,
                    HeaderValue::from_static("application/json"),
                )],
                out.body,
            )
                .into_response();
            let headers = res.headers_mut();
            if let Ok(key) = HeaderValue::from_str(&out.key) {
                headers.insert(KEY_HEADER, key);
            }
            headers.insert(
                CACHE_HEADER,
                HeaderValue::from_static(if out.cached { "hit" } else { "miss" }),
            );
            res
        }
        Err(e) => e.into_response(),
    }
}

async fn predict(State(state): State<AppState>, body: Bytes) -> Response {
    let req: PredictRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    json(run(&state, move |e| e.predict(&req)).await)
}
