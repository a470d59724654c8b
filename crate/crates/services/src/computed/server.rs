use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use picoflow_core::protocol::{SubmitRequest, SubmitResponse, TaskPhase, TaskStatus};
use tokio::sync::mpsc;
use uuid::Uuid;

use super::node::{NodeSimulator, NodeView};
use super::registry::Registry;
use crate::auth::Tokens;
use crate::http::ApiError;

#[derive(Debug, Clone)]
pub struct ComputeConfig {
    pub data_root: PathBuf,
    pub tokens: Tokens,
    pub provision_delay: Duration,
    pub idle_timeout: Duration,
}

impl ComputeConfig {
    pub fn new(data_root: impl Into<PathBuf>, tokens: Tokens) -> Self {
        Self {
            data_root: data_root.into(),
            tokens,
            provision_delay: Duration::from_secs(60),
            idle_timeout: Duration::from_secs(300),
        }
    }
}

struct Task {
    function: String,
    args: serde_json::Value,
    phase: TaskPhase,
}

struct Shared {
    config: ComputeConfig,
    registry: Registry,
    node: Mutex<NodeSimulator>,
    tasks: RwLock<HashMap<Uuid, Task>>,
    queue: mpsc::UnboundedSender<Uuid>,
}

impl Shared {
    fn node(&self) -> std::sync::MutexGuard<'_, NodeSimulator> {
        self.node.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Phases only move forward.
    fn set_phase(&self, id: Uuid, phase: TaskPhase) {
        let mut tasks = self.tasks.write().unwrap_or_else(|e| e.into_inner());
        if let Some(task) = tasks.get_mut(&id) {
            if !task.phase.is_terminal() && phase.rank() >= task.phase.rank() {
                task.phase = phase;
            }
        }
    }

    fn status(&self, id: Uuid) -> Option<TaskStatus> {
        let tasks = self.tasks.read().unwrap_or_else(|e| e.into_inner());
        tasks.get(&id).map(|t| TaskStatus {
            task_id: id,
            phase: t.phase.clone(),
        })
    }
}

/// Builds the router and starts the node's FIFO worker on the current tokio
/// runtime. The worker exits once the router and all its clones are dropped.
pub fn router(config: ComputeConfig, registry: Registry) -> Router {
    let (tx, rx) = mpsc::unbounded_channel();
    let node = NodeSimulator::new(config.provision_delay, config.idle_timeout);
    let shared = Arc::new(Shared {
        config,
        registry,
        node: Mutex::new(node),
        tasks: RwLock::new(HashMap::new()),
        queue: tx,
    });
    tokio::spawn(worker(Arc::downgrade(&shared), rx));
    Router::new()
        .route("/healthz", get(|| async { StatusCode::OK }))
        .route("/tasks", post(submit))
        .route("/tasks/{id}", get(poll))
        .route("/node", get(node_view))
        .with_state(shared)
}

async fn worker(shared: std::sync::Weak<Shared>, mut rx: mpsc::UnboundedReceiver<Uuid>) {
    while let Some(id) = rx.recv().await {
        let Some(shared) = shared.upgrade() else { return };
        let Some((function, args)) = ({
            let tasks = shared.tasks.read().unwrap_or_else(|e| e.into_inner());
            tasks.get(&id).map(|t| (t.function.clone(), t.args.clone()))
        }) else {
            continue;
        };

        loop {
            let now = Instant::now();
            let ready = shared.node().request(now);
            if ready > now {
                shared.set_phase(id, TaskPhase::WaitingForNode);
                tokio::time::sleep_until(ready.into()).await;
                continue;
            }
            if shared.node().begin_task(Instant::now()).is_ok() {
                break;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        shared.set_phase(id, TaskPhase::Running);

        let run = shared.registry.get(&function).map(|f| {
            let root = shared.config.data_root.clone();
            tokio::task::spawn_blocking(move || f.run(&root, &args))
        });
        let phase = match run {
            None => TaskPhase::Failed {
                reason: format!("function {function} vanished"),
            },
            Some(handle) => match handle.await {
                Ok(Ok((manifest, metadata))) => TaskPhase::Succeeded { manifest, metadata },
                Ok(Err(reason)) => TaskPhase::Failed { reason },
                Err(e) => TaskPhase::Failed {
                    reason: format!("task panicked: {e}"),
                },
            },
        };
        shared.node().end_task(Instant::now());
        if let TaskPhase::Failed { reason } = &phase {
            log::warn!("task {id} failed: {reason}");
        } else {
            log::info!("task {id} succeeded");
        }
        shared.set_phase(id, phase);
    }
}

async fn submit(State(shared): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    shared.config.tokens.require(&headers)?;
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("bad request body: {e}")))?;
    let function = shared
        .registry
        .get(&req.function)
        .ok_or_else(|| ApiError::not_found(format!("unknown function {:?}", req.function)))?;
    function.check(&req.args).map_err(ApiError::bad_request)?;

    let task_id = req.task_id.unwrap_or_else(Uuid::new_v4);
    {
        let mut tasks = shared.tasks.write().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = tasks.get(&task_id) {
            let status = TaskStatus {
                task_id,
                phase: existing.phase.clone(),
            };
            return Ok((StatusCode::OK, Json(status)).into_response());
        }
        let now = Instant::now();
        let phase = if shared.node().request(now) > now {
            TaskPhase::WaitingForNode
        } else {
            TaskPhase::Queued
        };
        tasks.insert(
            task_id,
            Task {
                function: req.function,
                args: req.args,
                phase,
            },
        );
    }
    shared
        .queue
        .send(task_id)
        .map_err(|_| ApiError::internal("worker stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(SubmitResponse { task_id })).into_response())
}

async fn poll(
    State(shared): State<Arc<Shared>>,
    headers: HeaderMap,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<TaskStatus>, ApiError> {
    shared.config.tokens.require(&headers)?;
    let id = Uuid::parse_str(&id).map_err(|_| ApiError::not_found(format!("no task {id}")))?;
    shared
        .status(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no task {id}")))
}

async fn node_view(State(shared): State<Arc<Shared>>, headers: HeaderMap) -> Result<Json<NodeView>, ApiError> {
    shared.config.tokens.require(&headers)?;
    Ok(Json(shared.node().view(Instant::now())))
}
