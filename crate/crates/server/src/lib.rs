//! HTTP server for progressive splat streams.
//!
//! | route | response |
//! |---|---|
//! | `GET /scenes` | registered scenes with splat counts and strategies |
//! | `GET /scenes/{id}/manifest?strategy=` | chunk manifest JSON |
//! | `GET /scenes/{id}/chunks/{n}?strategy=` | chunk bytes, strong ETag, byte ranges |
//! | `POST /scenes/{id}/prioritize` | manifest of a pose-prioritized stream |
//! | `GET /scenes/{id}/virtual/{key}/chunks/{n}` | chunk of a pose-prioritized stream |
//!
//! Errors are JSON objects `{"error": "..."}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;
use tower_http::cors::CorsLayer;

mod prioritize;
mod range;
mod registry;

pub use prioritize::{build_virtual_stream, PrioritizeRequest, StreamCache, VirtualStream};
pub use range::{parse_range, ByteRange, RangeError};
pub use registry::{load_stream, Registry, RegistryError, SceneEntry, SceneSummary, Stream};

pub const DEFAULT_CACHE_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub scene_dir: PathBuf,
    /// Maximum number of cached pose-prioritized streams.
    pub cache_size: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { listen: ([127, 0, 0, 1], 8080).into(), scene_dir: PathBuf::from("scenes"), cache_size: DEFAULT_CACHE_SIZE }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug)]
pub struct AppState {
    pub registry: Registry,
    pub cache: StreamCache,
}

impl AppState {
    pub fn new(registry: Registry, cache_size: usize) -> Arc<Self> {
        Arc::new(Self { registry, cache: StreamCache::new(cache_size) })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/manifest", get(manifest))
        .route("/scenes/{id}/chunks/{n}", get(chunk))
        .route("/scenes/{id}/prioritize", post(prioritize))
        .route("/scenes/{id}/virtual/{key}/chunks/{n}", get(virtual_chunk))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Loads the registry and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let registry = Registry::load(&config.scene_dir)?;
    tracing::info!(scenes = registry.len(), dir = %config.scene_dir.display(), "registry loaded");
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|source| ServerError::Bind { addr: config.listen, source })?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let app = router(AppState::new(registry, config.cache_size));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct StrategyQuery {
    strategy: Option<String>,
}

fn lookup<'a>(state: &'a AppState, id: &str, strategy: Option<&str>) -> Result<&'a Stream, Response> {
    let scene = state.registry.get(id).ok_or_else(|| error(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))?;
    scene.stream(strategy).ok_or_else(|| {
        error(StatusCode::NOT_FOUND, format!("scene `{id}` has no stream `{}`", strategy.unwrap_or_default()))
    })
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Response {
    Json(state.registry.summaries()).into_response()
}

async fn manifest(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<StrategyQuery>) -> Response {
    match lookup(&state, &id, q.strategy.as_deref()) {
        Ok(stream) => json_body(stream.manifest.to_json()),
        Err(r) => r,
    }
}

fn json_body(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn chunk(
    State(state): State<Arc<AppState>>,
    Path((id, n)): Path<(String, usize)>,
    Query(q): Query<StrategyQuery>,
    headers: HeaderMap,
) -> Response {
    let stream = match lookup(&state, &id, q.strategy.as_deref()) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let (Some(bytes), Some(desc)) = (stream.chunks.get(n), stream.manifest.chunks.get(n)) else {
        return error(StatusCode::NOT_FOUND, format!("chunk {n} out of range"));
    };
    let started = Instant::now();
    let response = chunk_response(bytes, desc.checksum, desc.count, &headers);
    tracing::info!(
        scene = %id,
        strategy = %stream.manifest.strategy,
        chunk = n,
        bytes = bytes.len(),
        status = response.status().as_u16(),
        micros = started.elapsed().as_micros() as u64,
        "chunk delivered"
    );
    response
}

async fn virtual_chunk(State(state): State<Arc<AppState>>, Path((id, key, n)): Path<(String, String, usize)>, headers: HeaderMap) -> Response {
    let Some(stream) = state.cache.get(&key).filter(|s| s.manifest.scene_id == id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown or expired prioritized stream `{key}`"));
    };
    let (Some(bytes), Some(desc)) = (stream.chunks.get(n), stream.manifest.chunks.get(n)) else {
        return error(StatusCode::NOT_FOUND, format!("chunk {n} out of range"));
    };
    let response = chunk_response(bytes, desc.checksum, desc.count, &headers);
    tracing::info!(scene = %id, key = %key, chunk = n, bytes = bytes.len(), status = response.status().as_u16(), "virtual chunk delivered");
    response
}

fn etag_matches(if_none_match: &str, etag: &str) -> bool {
    if_none_match.split(',').map(str::trim).any(|t| t == "*" || t == etag || t.strip_prefix("W/") == Some(etag))
}

fn chunk_response(bytes: &Bytes, checksum: u32, count: usize, headers: &HeaderMap) -> Response {
    let etag = format!("\"{checksum:08x}\"");
    let common = |mut r: Response| {
        let h = r.headers_mut();
        h.insert(header::ETAG, HeaderValue::from_str(&etag).unwrap());
        h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
        h.insert(header::CACHE_CONTROL, HeaderValue::from_static("public, max-age=31536000, immutable"));
        h.insert("x-splat-count", HeaderValue::from(count));
        r
    };
    if let Some(v) = headers.get(header::IF_NONE_MATCH).and_then(|v| v.to_str().ok()) {
        if etag_matches(v, &etag) {
            return common(StatusCode::NOT_MODIFIED.into_response());
        }
    }
    let total = bytes.len() as u64;
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok());
    let if_range_ok = headers
        .get(header::IF_RANGE)
        .and_then(|v| v.to_str().ok())
        .is_none_or(|v| v == etag);
    match range.filter(|_| if_range_ok).map(|r| parse_range(r, total)) {
        Some(Ok(ByteRange { start, end })) => {
            let body = bytes.slice(start as usize..=end as usize);
            let r = Response::builder()
                .status(StatusCode::PARTIAL_CONTENT)
                .header(header::CONTENT_TYPE, "application/octet-stream")
                .header(header::CONTENT_RANGE, format!("bytes {start}-{end}/{total}"))
                .body(Body::from(body))
                .unwrap();
            common(r)
        }
        Some(Err(RangeError::Unsatisfiable)) => {
            let mut r = error(StatusCode::RANGE_NOT_SATISFIABLE, "range not satisfiable");
            r.headers_mut().insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes */{total}")).unwrap());
            common(r)
        }
        // unparsable or multi-range requests get the whole chunk
        Some(Err(RangeError::Unsupported)) | None => common(
            ([(header::CONTENT_TYPE, "application/octet-stream")], bytes.clone()).into_response(),
        ),
    }
}

async fn prioritize(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: PrioritizeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if let Err(e) = req.validate() {
        return error(StatusCode::BAD_REQUEST, e);
    }
    let stream = match lookup(&state, &id, req.strategy.as_deref()) {
        Ok(s) => s,
        Err(r) => return r,
    };
    let strategy = stream.manifest.strategy.to_string();
    let key = req.cache_key(&id, &strategy);
    let virtual_stream = match state.cache.get(&key) {
        Some(v) => v,
        None => {
            let started = Instant::now();
            let built = {
                let (state, id, key, req) = (state.clone(), id.clone(), key.clone(), req.clone());
                tokio::task::spawn_blocking(move || {
                    let stream = lookup(&state, &id, req.strategy.as_deref()).map_err(|_| "stream vanished".to_string())?;
                    build_virtual_stream(&id, stream, &req, &key)
                })
                .await
            };
            match built {
                Ok(Ok(v)) => {
                    tracing::info!(scene = %id, key = %key, micros = started.elapsed().as_micros() as u64, "prioritized stream built");
                    state.cache.insert(v)
                }
                Ok(Err(e)) => return error(StatusCode::BAD_REQUEST, e),
                Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            }
        }
    };
    json_body(virtual_stream.manifest.to_json())
}
