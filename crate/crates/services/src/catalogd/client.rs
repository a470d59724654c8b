use async_trait::async_trait;
use picoflow_core::flow::{CatalogService, StepError, StepErrorKind};
use picoflow_core::protocol::{CatalogRecord, SearchPage};
use reqwest::header::AUTHORIZATION;
use reqwest::StatusCode;
use uuid::Uuid;

use crate::http::{build_http_client, error_text, retryable, RetryPolicy};

/// Search parameters as sent on the wire; dates are passed through verbatim.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchParams {
    pub text: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct CatalogClient {
    base_url: String,
    token: Option<String>,
    http: reqwest::Client,
    pub retry: RetryPolicy,
}

impl CatalogClient {
    pub fn new(base_url: impl Into<String>, token: Option<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token,
            http: build_http_client(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn authed(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.token {
            Some(t) => req.header(AUTHORIZATION, format!("Bearer {t}")),
            None => req,
        }
    }

    /// Publishes with retries. A 409 after a failed attempt means an earlier
    /// attempt was stored but its acknowledgment was lost, so it counts as
    /// success; a 409 on the first attempt is reported as a conflict.
    pub async fn publish_record(&self, record: &CatalogRecord) -> Result<(), StepError> {
        let url = format!("{}/records", self.base_url);
        let mut last = None;
        for attempt in 0..self.retry.attempts() {
            tokio::time::sleep(self.retry.before(attempt)).await;
            match self.authed(self.http.post(&url).json(record)).send().await {
                Err(e) => last = Some(StepError::new(StepErrorKind::Connection, e.to_string())),
                Ok(resp) if retryable(resp.status()) => {
                    last = Some(StepError::new(StepErrorKind::Remote, error_text(resp).await));
                }
                Ok(resp) => {
                    return match resp.status() {
                        StatusCode::CREATED => Ok(()),
                        StatusCode::CONFLICT if attempt > 0 => Ok(()),
                        StatusCode::CONFLICT => Err(StepError::new(StepErrorKind::Conflict, error_text(resp).await)),
                        _ => Err(StepError::new(StepErrorKind::Rejected, error_text(resp).await)),
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub async fn search(&self, params: &SearchParams) -> Result<SearchPage, StepError> {
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(t) = &params.text {
            query.push(("text", t.clone()));
        }
        if let Some(f) = &params.from {
            query.push(("from", f.clone()));
        }
        if let Some(t) = &params.to {
            query.push(("to", t.clone()));
        }
        if let Some(l) = params.limit {
            query.push(("limit", l.to_string()));
        }
        if let Some(o) = params.offset {
            query.push(("offset", o.to_string()));
        }
        let resp = self
            .authed(self.http.get(format!("{}/search", self.base_url)).query(&query))
            .send()
            .await
            .map_err(|e| StepError::new(StepErrorKind::Connection, e.to_string()))?;
        if resp.status() != StatusCode::OK {
            return Err(StepError::new(StepErrorKind::Rejected, error_text(resp).await));
        }
        resp.json()
            .await
            .map_err(|e| StepError::new(StepErrorKind::Remote, e.to_string()))
    }

    /// `Ok(None)` for 404.
    pub async fn get(&self, id: Uuid) -> Result<Option<CatalogRecord>, StepError> {
        let resp = self
            .authed(self.http.get(format!("{}/records/{id}", self.base_url)))
            .send()
            .await
            .map_err(|e| StepError::new(StepErrorKind::Connection, e.to_string()))?;
        match resp.status() {
            StatusCode::OK => resp
                .json()
                .await
                .map(Some)
                .map_err(|e| StepError::new(StepErrorKind::Remote, e.to_string())),
            StatusCode::NOT_FOUND => Ok(None),
            _ => Err(StepError::new(StepErrorKind::Rejected, error_text(resp).await)),
        }
    }
}

#[async_trait]
impl CatalogService for CatalogClient {
    async fn publish(&self, record: &CatalogRecord) -> Result<(), StepError> {
        self.publish_record(record).await
    }
}
