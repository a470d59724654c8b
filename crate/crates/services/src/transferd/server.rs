use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use futures::StreamExt;
use picoflow_core::digest::{is_sha256_hex, sha256_file};
use picoflow_core::protocol::{TransferResponse, TransferStatus};
use sha2::{Digest, Sha256};
use tokio::io::AsyncWriteExt;
use uuid::Uuid;

use crate::auth::Tokens;
use crate::http::safe_relpath;

pub const TRANSFER_ID_HEADER: &str = "x-transfer-id";
pub const EXPECTED_SHA256_HEADER: &str = "x-expected-sha256";
/// Scratch directory under the root; never a valid destination.
pub const TEMP_DIR: &str = ".tmp";

const ENOSPC: i32 = 28;

#[derive(Debug, Clone)]
pub struct TransferConfig {
    pub root: PathBuf,
    pub tokens: Tokens,
    /// Receive-side pacing limit in bytes per second.
    pub max_bytes_per_second: Option<u64>,
}

impl TransferConfig {
    pub fn new(root: impl Into<PathBuf>, tokens: Tokens) -> Self {
        Self {
            root: root.into(),
            tokens,
            max_bytes_per_second: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransferConfigError {
    #[error("transfer root {0}: {1}")]
    Root(PathBuf, std::io::Error),
    #[error("throttle must be > 0 bytes/s")]
    Throttle,
}

struct AppState {
    config: TransferConfig,
    locks: Mutex<HashMap<PathBuf, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    fn lock_for(&self, path: &Path) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.retain(|_, l| Arc::strong_count(l) > 1);
        locks.entry(path.to_path_buf()).or_default().clone()
    }
}

pub fn router(config: TransferConfig) -> Result<Router, TransferConfigError> {
    if config.max_bytes_per_second == Some(0) {
        return Err(TransferConfigError::Throttle);
    }
    let tmp = config.root.join(TEMP_DIR);
    std::fs::create_dir_all(&tmp).map_err(|e| TransferConfigError::Root(config.root.clone(), e))?;
    let state = Arc::new(AppState {
        config,
        locks: Mutex::new(HashMap::new()),
    });
    Ok(Router::new()
        .route("/healthz", get(|| async { StatusCode::OK }))
        .route("/files/{*relpath}", put(put_file))
        .layer(DefaultBodyLimit::disable())
        .with_state(state))
}

fn reply(
    code: StatusCode,
    transfer_id: Uuid,
    status: TransferStatus,
    bytes: u64,
    sha256: String,
    started: Instant,
    error: Option<String>,
) -> Response {
    let body = TransferResponse {
        transfer_id,
        status,
        bytes,
        sha256,
        duration_s: started.elapsed().as_secs_f64(),
        error,
    };
    (code, Json(body)).into_response()
}

/// Reads and discards the rest of a request body so the client sees the
/// response instead of a reset connection.
async fn drain(body: Body) {
    let mut stream = body.into_data_stream();
    while let Some(Ok(_)) = stream.next().await {}
}

/// Sleeps until `bytes` could have arrived at `rate` since `start`.
struct Pacer {
    start: tokio::time::Instant,
    rate: Option<u64>,
}

impl Pacer {
    async fn pace(&self, bytes: u64) {
        if let Some(rate) = self.rate {
            let due = self.start + Duration::from_secs_f64(bytes as f64 / rate as f64);
            tokio::time::sleep_until(due).await;
        }
    }
}

enum WriteFailure {
    Body(String),
    Io(std::io::Error),
}

async fn put_file(
    State(state): State<Arc<AppState>>,
    UrlPath(relpath): UrlPath<String>,
    headers: HeaderMap,
    body: Body,
) -> Response {
    let started = Instant::now();
    let transfer_id = headers
        .get(TRANSFER_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| Uuid::parse_str(v).ok())
        .unwrap_or_else(Uuid::new_v4);
    let rejected = |code: StatusCode, msg: String| {
        reply(code, transfer_id, TransferStatus::Rejected, 0, String::new(), started, Some(msg))
    };

    if let Err(e) = state.config.tokens.require(&headers) {
        drain(body).await;
        return rejected(StatusCode::UNAUTHORIZED, crate::http::ApiError::from(e).message);
    }
    if !safe_relpath(&relpath) || relpath.split('/').next() == Some(TEMP_DIR) {
        drain(body).await;
        return rejected(StatusCode::BAD_REQUEST, format!("illegal destination path {relpath:?}"));
    }
    let expected = match headers.get(EXPECTED_SHA256_HEADER).and_then(|v| v.to_str().ok()) {
        Some(h) if is_sha256_hex(h) => h.to_ascii_lowercase(),
        _ => {
            drain(body).await;
            return rejected(StatusCode::BAD_REQUEST, "missing or malformed expected digest".into());
        }
    };

    let dest = state.config.root.join(&relpath);
    let lock = state.lock_for(&dest);
    let _guard = lock.lock().await;

    // Idempotent re-send: identical content already in place.
    if dest.is_file() {
        let existing = {
            let dest = dest.clone();
            tokio::task::spawn_blocking(move || sha256_file(&dest)).await
        };
        if let Ok(Ok((digest, len))) = existing {
            if digest == expected {
                drain(body).await;
                log::info!("{relpath}: already present, not rewritten");
                return reply(StatusCode::OK, transfer_id, TransferStatus::Complete, len, digest, started, None);
            }
        }
    }

    let tmp = state
        .config
        .root
        .join(TEMP_DIR)
        .join(format!("{transfer_id}-{}.part", Uuid::new_v4().simple()));
    let written = receive(&tmp, body, state.config.max_bytes_per_second).await;
    let (digest, bytes) = match written {
        Ok(v) => v,
        Err(failure) => {
            let _ = tokio::fs::remove_file(&tmp).await;
            return match failure {
                WriteFailure::Body(msg) => rejected(StatusCode::BAD_REQUEST, format!("upload aborted: {msg}")),
                WriteFailure::Io(e) if e.raw_os_error() == Some(ENOSPC) => {
                    rejected(StatusCode::INSUFFICIENT_STORAGE, format!("disk full: {e}"))
                }
                WriteFailure::Io(e) => rejected(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            };
        }
    };

    if digest != expected {
        let _ = tokio::fs::remove_file(&tmp).await;
        log::warn!("{relpath}: digest mismatch, got {digest}");
        return reply(
            StatusCode::UNPROCESSABLE_ENTITY,
            transfer_id,
            TransferStatus::Corrupt,
            bytes,
            digest,
            started,
            Some(format!("expected sha256 {expected}")),
        );
    }

    let placed = async {
        if let Some(parent) = dest.parent() {
            tokio::fs::create_dir_all(parent).await?;
        }
        tokio::fs::rename(&tmp, &dest).await
    }
    .await;
    if let Err(e) = placed {
        let _ = tokio::fs::remove_file(&tmp).await;
        let code = if e.raw_os_error() == Some(ENOSPC) {
            StatusCode::INSUFFICIENT_STORAGE
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        return rejected(code, e.to_string());
    }
    log::info!("{relpath}: {bytes} bytes in {:.3}s", started.elapsed().as_secs_f64());
    reply(StatusCode::OK, transfer_id, TransferStatus::Complete, bytes, digest, started, None)
}

async fn receive(tmp: &Path, body: Body, rate: Option<u64>) -> Result<(String, u64), WriteFailure> {
    let mut file = tokio::fs::File::create(tmp).await.map_err(WriteFailure::Io)?;
    let mut hasher = Sha256::new();
    let mut bytes = 0u64;
    let pacer = Pacer {
        start: tokio::time::Instant::now(),
        rate,
    };
    let mut stream = body.into_data_stream();
    while let Some(chunk) = stream.next().await {
        let chunk = chunk.map_err(|e| WriteFailure::Body(e.to_string()))?;
        hasher.update(&chunk);
        file.write_all(&chunk).await.map_err(WriteFailure::Io)?;
        bytes += chunk.len() as u64;
        pacer.pace(bytes).await;
    }
    file.flush().await.map_err(WriteFailure::Io)?;
    file.sync_all().await.map_err(WriteFailure::Io)?;
    Ok((hex::encode(hasher.finalize()), bytes))
}
