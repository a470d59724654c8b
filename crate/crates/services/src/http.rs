//! Plumbing shared by the three servers and their clients.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::auth::AuthError;

/// JSON error body `{"error": ...}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let msg = match e {
            AuthError::Missing => "missing bearer token",
            AuthError::Invalid => "invalid bearer token",
        };
        Self::new(StatusCode::UNAUTHORIZED, msg)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

/// A server bound to a local port, running until [`RunningServer::shutdown`].
#[derive(Debug)]
pub struct RunningServer {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }
}

/// Serves `router` on `listener` in a background task.
pub fn spawn_server(listener: TcpListener, router: Router) -> std::io::Result<RunningServer> {
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(RunningServer {
        addr,
        stop: Some(tx),
        task,
    })
}

/// Serves `router` in the foreground until `shutdown` resolves.
pub async fn serve_until(
    listener: TcpListener,
    router: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(shutdown)
        .await
}

/// Client-side retry schedule: an initial attempt, then one retry after each
/// listed delay.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: [1, 2, 4].map(Duration::from_secs).to_vec(),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }

    pub fn attempts(&self) -> usize {
        self.delays.len() + 1
    }

    /// Delay before attempt `attempt` (0-based); zero for the first.
    pub fn before(&self, attempt: usize) -> Duration {
        match attempt {
            0 => Duration::ZERO,
            n => self.delays.get(n - 1).copied().unwrap_or(Duration::ZERO),
        }
    }
}

/// True for statuses worth another attempt.
pub fn retryable(status: reqwest::StatusCode) -> bool {
    matches!(status.as_u16(), 500 | 502 | 503 | 504)
}

pub fn build_http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .connect_timeout(Duration::from_secs(10))
        .build()
        .expect("http client")
}

/// Extracts the `error` field of a JSON error body, falling back to the raw
/// text.
pub async fn error_text(resp: reqwest::Response) -> String {
    let status = resp.status();
    let body = resp.text().await.unwrap_or_default();
    let msg = serde_json::from_str::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v["error"].as_str().map(str::to_string))
        .unwrap_or(body);
    format!("HTTP {}: {msg}", status.as_u16())
}

/// True iff `relpath` is a non-empty relative path of plain components.
pub fn safe_relpath(relpath: &str) -> bool {
    use std::path::{Component, Path};
    !relpath.is_empty()
        && !relpath.contains('\\')
        && Path::new(relpath)
            .components()
            .all(|c| matches!(c, Component::Normal(_)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relpaths() {
        assert!(safe_relpath("incoming/a.emdl"));
        assert!(safe_relpath("a"));
        assert!(!safe_relpath(""));
        assert!(!safe_relpath("../escape"));
        assert!(!safe_relpath("a/../../b"));
        assert!(!safe_relpath("/etc/passwd"));
        assert!(!safe_relpath("./a"));
        assert!(!safe_relpath("a\\..\\b"));
    }

    #[test]
    fn retry_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.attempts(), 4);
        assert_eq!(p.before(0), Duration::ZERO);
        assert_eq!(p.before(1), Duration::from_secs(1));
        assert_eq!(p.before(3), Duration::from_secs(4));
    }
}
