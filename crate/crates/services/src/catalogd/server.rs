use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query as UrlQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use picoflow_core::protocol::{CatalogRecord, SearchPage};
use tokio_util::io::ReaderStream;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use uuid::Uuid;

use super::index::{parse_bound, Index, InsertError, Query, DEFAULT_LIMIT, MAX_LIMIT};
use super::record_log::RecordLog;
use crate::auth::Tokens;
use crate::http::{safe_relpath, ApiError};

#[derive(Debug, Clone)]
pub struct CatalogConfig {
    pub log_path: PathBuf,
    pub tokens: Tokens,
    /// Principals allowed to publish.
    pub publishers: BTreeSet<String>,
    /// Directory artifact paths are resolved against.
    pub artifact_root: Option<PathBuf>,
    /// Serve a static bundle (the portal) for unmatched paths.
    pub static_dir: Option<PathBuf>,
    pub cors: bool,
}

impl CatalogConfig {
    pub fn new(log_path: impl Into<PathBuf>, tokens: Tokens) -> Self {
        Self {
            log_path: log_path.into(),
            tokens,
            publishers: BTreeSet::new(),
            artifact_root: None,
            static_dir: None,
            cors: false,
        }
    }
}

struct Shared {
    config: CatalogConfig,
    index: RwLock<Index>,
    /// Held for the whole check, append, index sequence: the ingest queue.
    log: Mutex<RecordLog>,
}

impl Shared {
    fn index(&self) -> std::sync::RwLockReadGuard<'_, Index> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }

    fn principal(&self, headers: &HeaderMap) -> Result<Option<String>, ApiError> {
        Ok(self.config.tokens.identify(headers)?.map(str::to_string))
    }

    /// The record if `principal` may see it: 401 for anonymous callers and
    /// 404 for principals without access, so ids of private records do not
    /// leak to signed-in users.
    fn visible_record(&self, id: &str, principal: Option<&str>) -> Result<CatalogRecord, ApiError> {
        let missing = || ApiError::not_found(format!("no record {id}"));
        let id = Uuid::parse_str(id).map_err(|_| missing())?;
        let record = self.index().get(&id).cloned().ok_or_else(missing)?;
        if record.is_visible_to(principal) {
            Ok(record)
        } else if principal.is_none() {
            Err(ApiError::new(StatusCode::UNAUTHORIZED, "record is not public"))
        } else {
            Err(missing())
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogStartError {
    #[error("record log {0}: {1}")]
    Log(PathBuf, std::io::Error),
}

/// Replays the record log and builds the router.
pub fn router(config: CatalogConfig) -> Result<Router, CatalogStartError> {
    let (log, records) =
        RecordLog::open(&config.log_path).map_err(|e| CatalogStartError::Log(config.log_path.clone(), e))?;
    let mut index = Index::default();
    for r in records {
        if let Err(e) = index.insert(r) {
            log::warn!("skipping logged record: {e:?}");
        }
    }
    log::info!("catalog loaded {} records from {}", index.len(), config.log_path.display());
    let cors = config.cors;
    let static_dir = config.static_dir.clone();
    let shared = Arc::new(Shared {
        config,
        index: RwLock::new(index),
        log: Mutex::new(log),
    });
    let mut app = Router::new()
        .route("/healthz", get(|| async { StatusCode::OK }))
        .route("/records", post(publish))
        .route("/records/{id}", get(get_record))
        .route("/search", get(search))
        .route("/artifacts/{record_id}/{name}", get(artifact))
        .with_state(shared);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if cors {
        app = app.layer(CorsLayer::permissive());
    }
    Ok(app)
}

async fn publish(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let principal = shared.config.tokens.require(&headers)?.to_string();
    if !shared.config.publishers.contains(&principal) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, format!("{principal} may not publish")));
    }
    let record: CatalogRecord = serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_slice(&body))
        .map_err(|e| ApiError::bad_request(format!("{}: {}", e.path(), e.inner())))?;
    let id = record.record_id;

    let worker = shared.clone();
    let outcome = tokio::task::spawn_blocking(move || -> std::io::Result<Result<(), InsertError>> {
        let mut log = worker.log.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = worker.index().check(&record) {
            return Ok(Err(e));
        }
        log.append(&record)?;
        let mut index = worker.index.write().unwrap_or_else(|e| e.into_inner());
        Ok(index.insert(record))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(format!("record log: {e}")))?;

    match outcome {
        Ok(()) => {
            log::info!("published {id}");
            Ok((StatusCode::CREATED, Json(serde_json::json!({ "record_id": id }))).into_response())
        }
        Err(InsertError::Duplicate(id)) => Err(ApiError::new(StatusCode::CONFLICT, format!("record {id} already exists"))),
        Err(InsertError::Invalid(e)) => Err(ApiError::bad_request(e.to_string())),
    }
}

async fn get_record(
    State(shared): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<CatalogRecord>, ApiError> {
    let principal = shared.principal(&headers)?;
    shared.visible_record(&id, principal.as_deref()).map(Json)
}

/// Parses `text`, `from`, `to`, `limit` and `offset`; other keys are ignored.
pub fn parse_query(params: &HashMap<String, String>) -> Result<Query, String> {
    let text = params.get("text").filter(|t| !t.trim().is_empty()).cloned();
    let bound = |key: &str, end: bool| -> Result<_, String> {
        match params.get(key).filter(|v| !v.is_empty()) {
            None => Ok(None),
            Some(v) => parse_bound(v, end).map(Some).ok_or_else(|| format!("{key}: invalid date {v:?}")),
        }
    };
    let from = bound("from", false)?;
    let to = bound("to", true)?;
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err("from is after to".into());
        }
    }
    let number = |key: &str, default: usize| -> Result<usize, String> {
        match params.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("{key}: not a non-negative integer")),
        }
    };
    let limit = number("limit", DEFAULT_LIMIT)?;
    if limit > MAX_LIMIT {
        return Err(format!("limit: at most {MAX_LIMIT}"));
    }
    Ok(Query {
        text,
        from,
        to,
        limit,
        offset: number("offset", 0)?,
    })
}

async fn search(
    State(shared): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlQuery(params): UrlQuery<HashMap<String, String>>,
) -> Result<Json<SearchPage>, ApiError> {
    let principal = shared.principal(&headers)?;
    let q = parse_query(&params).map_err(ApiError::bad_request)?;
    let (total, records) = shared.index().search(&q, principal.as_deref());
    Ok(Json(SearchPage { total, records }))
}

fn content_type(name: &str) -> &'static str {
    match name.rsplit('.').next() {
        Some("pgm") => "image/x-portable-graymap",
        Some("csv") => "text/csv",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn artifact(
    State(shared): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath((record_id, name)): UrlPath<(String, String)>,
) -> Result<Response, ApiError> {
    let principal = shared.principal(&headers)?;
    let record = shared.visible_record(&record_id, principal.as_deref())?;
    let missing = || ApiError::not_found(format!("no artifact {name} in record {record_id}"));
    let root = shared.config.artifact_root.as_ref().ok_or_else(missing)?;
    let entry = record.artifacts.find_by_name(&name).ok_or_else(missing)?;
    if !safe_relpath(&entry.path) {
        return Err(missing());
    }
    let file = tokio::fs::File::open(root.join(&entry.path)).await.map_err(|_| missing())?;
    let body = Body::from_stream(ReaderStream::new(file));
    Ok(([(header::CONTENT_TYPE, content_type(&name))], body).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn query_parsing() {
        let q = parse_query(&params(&[])).unwrap();
        assert_eq!(q, Query::all());
        let q = parse_query(&params(&[("text", "gold"), ("from", "2023-05-01"), ("limit", "5")])).unwrap();
        assert_eq!(q.text.as_deref(), Some("gold"));
        assert_eq!(q.limit, 5);
        assert!(parse_query(&params(&[("from", "2023-05-03"), ("to", "2023-05-01")])).is_err());
        assert!(parse_query(&params(&[("from", "tomorrow")])).is_err());
        assert!(parse_query(&params(&[("limit", "-1")])).is_err());
        assert!(parse_query(&params(&[("limit", "100000")])).is_err());
        // same day on both ends is a whole-day window
        assert!(parse_query(&params(&[("from", "2023-05-01"), ("to", "2023-05-01")])).is_ok());
    }
}
