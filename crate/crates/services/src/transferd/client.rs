use std::path::{Path, PathBuf};

use async_trait::async_trait;
use picoflow_core::flow::{StepError, StepErrorKind, TransferService};
use picoflow_core::protocol::{TransferResponse, TransferStatus};
use reqwest::header::{AUTHORIZATION, CONTENT_LENGTH};
use tokio_util::io::ReaderStream;
use uuid::Uuid;

use super::server::{EXPECTED_SHA256_HEADER, TRANSFER_ID_HEADER};
use crate::http::{build_http_client, error_text, retryable, safe_relpath, RetryPolicy};

pub const DEFAULT_CHUNK_SIZE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRequest {
    pub transfer_id: Uuid,
    pub source_path: PathBuf,
    pub dest_relpath: String,
    pub expected_sha256: String,
}

impl TransferRequest {
    pub fn new(source_path: impl Into<PathBuf>, dest_relpath: impl Into<String>, expected_sha256: impl Into<String>) -> Self {
        Self {
            transfer_id: Uuid::new_v4(),
            source_path: source_path.into(),
            dest_relpath: dest_relpath.into(),
            expected_sha256: expected_sha256.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error("cannot reach transfer server: {0}")]
    Connection(String),
    #[error("transfer rejected: {0}")]
    Rejected(String),
    #[error("transfer corrupt: received sha256 {}", .0.sha256)]
    Corrupt(TransferResponse),
    #[error("cannot read source {0}: {1}")]
    Source(PathBuf, std::io::Error),
    #[error("transfer server error: {0}")]
    Server(String),
}

impl From<TransferError> for StepError {
    fn from(e: TransferError) -> Self {
        let kind = match &e {
            TransferError::Connection(_) => StepErrorKind::Connection,
            TransferError::Rejected(_) => StepErrorKind::Rejected,
            TransferError::Corrupt(_) => StepErrorKind::Corrupt,
            TransferError::Source(..) => StepErrorKind::Local,
            TransferError::Server(_) => StepErrorKind::Remote,
        };
        StepError::new(kind, e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct TransferClient {
    base_url: String,
    token: String,
    http: reqwest::Client,
    pub retry: RetryPolicy,
    pub chunk_size: usize,
}

enum Attempt {
    Done(Result<TransferResponse, TransferError>),
    Retry(TransferError),
}

impl TransferClient {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            http: build_http_client(),
            retry: RetryPolicy::default(),
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Streams the source file to the server. Transport failures and 5xx
    /// answers are retried; the server's idempotency makes that safe.
    pub async fn put_file(&self, req: &TransferRequest) -> Result<TransferResponse, TransferError> {
        if !safe_relpath(&req.dest_relpath) {
            return Err(TransferError::Rejected(format!("illegal destination path {:?}", req.dest_relpath)));
        }
        let mut last = None;
        for attempt in 0..self.retry.attempts() {
            tokio::time::sleep(self.retry.before(attempt)).await;
            match self.attempt(req).await {
                Attempt::Done(result) => return result,
                Attempt::Retry(e) => {
                    log::warn!("transfer {} attempt {} failed: {e}", req.transfer_id, attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    async fn attempt(&self, req: &TransferRequest) -> Attempt {
        let file = match tokio::fs::File::open(&req.source_path).await {
            Ok(f) => f,
            Err(e) => return Attempt::Done(Err(TransferError::Source(req.source_path.clone(), e))),
        };
        let len = match file.metadata().await {
            Ok(m) => m.len(),
            Err(e) => return Attempt::Done(Err(TransferError::Source(req.source_path.clone(), e))),
        };
        let body = reqwest::Body::wrap_stream(ReaderStream::with_capacity(file, self.chunk_size));
        let url = format!("{}/files/{}", self.base_url, req.dest_relpath);
        let sent = self
            .http
            .put(url)
            .header(AUTHORIZATION, format!("Bearer {}", self.token))
            .header(TRANSFER_ID_HEADER, req.transfer_id.to_string())
            .header(EXPECTED_SHA256_HEADER, &req.expected_sha256)
            .header(CONTENT_LENGTH, len)
            .body(body)
            .send()
            .await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(TransferError::Connection(e.to_string())),
        };
        let status = resp.status();
        if retryable(status) {
            return Attempt::Retry(TransferError::Server(error_text(resp).await));
        }
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(TransferError::Connection(e.to_string())),
        };
        let parsed: Option<TransferResponse> = serde_json::from_str(&text).ok();
        Attempt::Done(match (status.as_u16(), parsed) {
            (200, Some(r)) if r.status == TransferStatus::Complete => Ok(r),
            (422, Some(r)) => Err(TransferError::Corrupt(r)),
            (_, Some(r)) => Err(TransferError::Rejected(format!(
                "HTTP {}: {}",
                status.as_u16(),
                r.error.unwrap_or_default()
            ))),
            (_, None) => Err(TransferError::Server(format!("HTTP {}: {text}", status.as_u16()))),
        })
    }
}

#[async_trait]
impl TransferService for TransferClient {
    async fn put(&self, source: &Path, dest_relpath: &str, sha256: &str) -> Result<u64, StepError> {
        let req = TransferRequest::new(source, dest_relpath, sha256);
        Ok(self.put_file(&req).await?.bytes)
    }
}
