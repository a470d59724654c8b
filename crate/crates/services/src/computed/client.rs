use async_trait::async_trait;
use picoflow_core::flow::{ComputeService, StepError, StepErrorKind};
use picoflow_core::protocol::{SubmitRequest, SubmitResponse, TaskPhase, TaskStatus};
use reqwest::header::AUTHORIZATION;
use reqwest::StatusCode;
use uuid::Uuid;

use crate::http::{build_http_client, error_text, retryable, RetryPolicy};

#[derive(Debug, Clone)]
pub struct ComputeClient {
    base_url: String,
    token: String,
    http: reqwest::Client,
    pub retry: RetryPolicy,
}

impl ComputeClient {
    pub fn new(base_url: impl Into<String>, token: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: token.into(),
            http: build_http_client(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Sends `make()` until it yields a non-retryable answer.
    async fn send(
        &self,
        make: impl Fn() -> reqwest::RequestBuilder,
    ) -> Result<reqwest::Response, StepError> {
        let mut last = None;
        for attempt in 0..self.retry.attempts() {
            tokio::time::sleep(self.retry.before(attempt)).await;
            match make().header(AUTHORIZATION, format!("Bearer {}", self.token)).send().await {
                Ok(resp) if retryable(resp.status()) => {
                    last = Some(StepError::new(StepErrorKind::Remote, error_text(resp).await));
                }
                Ok(resp) => return Ok(resp),
                Err(e) => last = Some(StepError::new(StepErrorKind::Connection, e.to_string())),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Submits with a client-chosen task id, so a retried submission that
    /// did reach the server is not executed twice.
    pub async fn submit_task(&self, function: &str, args: serde_json::Value) -> Result<Uuid, StepError> {
        let req = SubmitRequest {
            task_id: Some(Uuid::new_v4()),
            function: function.to_string(),
            args,
        };
        let url = format!("{}/tasks", self.base_url);
        let resp = self.send(|| self.http.post(&url).json(&req)).await?;
        match resp.status() {
            StatusCode::ACCEPTED => {
                let body: SubmitResponse = resp
                    .json()
                    .await
                    .map_err(|e| StepError::new(StepErrorKind::Remote, e.to_string()))?;
                Ok(body.task_id)
            }
            StatusCode::OK => Ok(req.task_id.expect("set above")),
            _ => Err(StepError::new(StepErrorKind::Rejected, error_text(resp).await)),
        }
    }

    pub async fn status(&self, task_id: Uuid) -> Result<TaskStatus, StepError> {
        let url = format!("{}/tasks/{task_id}", self.base_url);
        let resp = self.send(|| self.http.get(&url)).await?;
        if resp.status() != StatusCode::OK {
            return Err(StepError::new(StepErrorKind::Rejected, error_text(resp).await));
        }
        resp.json()
            .await
            .map_err(|e| StepError::new(StepErrorKind::Remote, e.to_string()))
    }

    pub async fn node(&self) -> Result<serde_json::Value, StepError> {
        let url = format!("{}/node", self.base_url);
        let resp = self.send(|| self.http.get(&url)).await?;
        resp.json()
            .await
            .map_err(|e| StepError::new(StepErrorKind::Remote, e.to_string()))
    }
}

#[async_trait]
impl ComputeService for ComputeClient {
    async fn submit(&self, function: &str, args: serde_json::Value) -> Result<Uuid, StepError> {
        self.submit_task(function, args).await
    }

    async fn poll(&self, task_id: Uuid) -> Result<TaskPhase, StepError> {
        Ok(self.status(task_id).await?.phase)
    }
}
