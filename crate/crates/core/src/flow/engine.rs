use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::{record_id_for, BackoffPolicy, FlowDefinition, FlowRun, FlowState, StepName, StepTiming};
use crate::clock;
use crate::digest::sha256_file;
use crate::protocol::{CatalogRecord, TaskPhase, PUBLIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepErrorKind {
    /// The service could not be reached.
    Connection,
    /// The service refused the request (auth, validation).
    Rejected,
    /// Data integrity check failed.
    Corrupt,
    /// The remote side ran the work and reported failure.
    Remote,
    Timeout,
    /// The target already holds an object with this id.
    Conflict,
    /// Failure on the engine's side before or after the remote call.
    Local,
}

impl fmt::Display for StepErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepErrorKind::Connection => "connection",
            StepErrorKind::Rejected => "rejected",
            StepErrorKind::Corrupt => "corrupt",
            StepErrorKind::Remote => "remote",
            StepErrorKind::Timeout => "timeout",
            StepErrorKind::Conflict => "conflict",
            StepErrorKind::Local => "local",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct StepError {
    pub kind: StepErrorKind,
    pub detail: String,
}

impl StepError {
    pub fn new(kind: StepErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

#[async_trait]
pub trait TransferService: Send + Sync {
    /// Uploads `source` to `dest_relpath`; returns the byte count the
    /// receiver confirmed.
    async fn put(&self, source: &Path, dest_relpath: &str, sha256: &str) -> Result<u64, StepError>;
}

#[async_trait]
pub trait ComputeService: Send + Sync {
    async fn submit(&self, function: &str, args: serde_json::Value) -> Result<Uuid, StepError>;
    async fn poll(&self, task_id: Uuid) -> Result<TaskPhase, StepError>;
}

#[async_trait]
pub trait CatalogService: Send + Sync {
    async fn publish(&self, record: &CatalogRecord) -> Result<(), StepError>;
}

#[derive(Clone)]
pub struct FlowServices {
    pub transfer: Arc<dyn TransferService>,
    pub compute: Arc<dyn ComputeService>,
    pub catalog: Arc<dyn CatalogService>,
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub backoff: BackoffPolicy,
    pub analysis_function: String,
    /// Output prefix on the compute side; each flow writes to
    /// `{results_root}/{flow_id}`.
    pub results_root: String,
    pub visible_to: Vec<String>,
    pub analysis_timeout: Duration,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            backoff: BackoffPolicy::default(),
            analysis_function: "analyze_emdl".to_string(),
            results_root: "results".to_string(),
            visible_to: vec![PUBLIC.to_string()],
            analysis_timeout: Duration::from_secs(3600),
        }
    }
}

fn fail(mut run: FlowRun, step: StepName, started: Option<f64>, err: StepError) -> FlowRun {
    let now = clock::now();
    if let Some(active_start) = started {
        run.timings.push(StepTiming {
            step,
            active_start,
            active_end: now,
        });
    }
    log::warn!("flow {} failed in {step:?}: {err}", run.definition.flow_id);
    run.transition(FlowState::Failed {
        step,
        reason: err.to_string(),
    })
    .expect("failure is legal from the active step");
    run.t_end = Some(now);
    run
}

async fn await_task(
    compute: &dyn ComputeService,
    task_id: Uuid,
    backoff: &BackoffPolicy,
    timeout: Duration,
) -> Result<(crate::analysis::ArtifactManifest, serde_json::Value), StepError> {
    let deadline = tokio::time::Instant::now() + timeout;
    let mut attempt = 0u32;
    loop {
        let wait = backoff.delay(attempt);
        if tokio::time::Instant::now() + wait > deadline {
            return Err(StepError::new(
                StepErrorKind::Timeout,
                format!("task {task_id} not finished after {timeout:?}"),
            ));
        }
        tokio::time::sleep(wait).await;
        match compute.poll(task_id).await? {
            TaskPhase::Succeeded { manifest, metadata } => return Ok((manifest, metadata)),
            TaskPhase::Failed { reason } => return Err(StepError::new(StepErrorKind::Remote, reason)),
            _ => attempt = attempt.saturating_add(1),
        }
    }
}

/// Runs Transfer, Analysis and Publication in order. Never panics on service
/// failure: the returned run is either Succeeded or Failed at the step that
/// broke, with timings for every step that was attempted.
pub async fn run_flow(def: FlowDefinition, services: &FlowServices, opts: &FlowOptions) -> FlowRun {
    let mut run = FlowRun::new(def, clock::now());
    let flow_id = run.definition.flow_id;
    let source = run.definition.source_path.clone();

    run.transition(FlowState::Transferring).expect("fresh run");
    let digest = {
        let source = source.clone();
        tokio::task::spawn_blocking(move || sha256_file(&source)).await
    };
    let digest = match digest {
        Ok(Ok((hex, _))) => hex,
        Ok(Err(e)) => {
            let err = StepError::new(StepErrorKind::Local, format!("cannot read {}: {e}", source.display()));
            return fail(run, StepName::Transfer, None, err);
        }
        Err(e) => return fail(run, StepName::Transfer, None, StepError::new(StepErrorKind::Local, e.to_string())),
    };
    let file_name = source
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data.emdl".to_string());
    let dest_relpath = format!("{}/{flow_id}/{file_name}", run.definition.dest_root.trim_matches('/'));
    let started = clock::now();
    match services.transfer.put(&source, &dest_relpath, &digest).await {
        Ok(bytes) => {
            run.timings.push(StepTiming {
                step: StepName::Transfer,
                active_start: started,
                active_end: clock::now(),
            });
            run.bytes_transferred = Some(bytes);
        }
        Err(e) => return fail(run, StepName::Transfer, Some(started), e),
    }

    run.transition(FlowState::Analyzing).expect("transfer done");
    let out_dir = format!("{}/{flow_id}", opts.results_root.trim_matches('/'));
    let args = serde_json::json!({ "input": dest_relpath, "out_dir": out_dir });
    let started = clock::now();
    let submitted = services.compute.submit(&opts.analysis_function, args).await;
    let outcome = match submitted {
        Ok(task_id) => {
            await_task(services.compute.as_ref(), task_id, &opts.backoff, opts.analysis_timeout).await
        }
        Err(e) => Err(e),
    };
    let (manifest, metadata) = match outcome {
        Ok(v) => v,
        Err(e) => return fail(run, StepName::Analysis, Some(started), e),
    };
    run.timings.push(StepTiming {
        step: StepName::Analysis,
        active_start: started,
        active_end: clock::now(),
    });

    run.transition(FlowState::Publishing).expect("analysis done");
    let Some(acquired) = metadata["acquisition_datetime"].as_str().map(str::to_string) else {
        let err = StepError::new(StepErrorKind::Local, "metadata lacks acquisition_datetime");
        return fail(run, StepName::Publication, None, err);
    };
    let record = CatalogRecord {
        record_id: record_id_for(flow_id),
        flow_id,
        flow_kind: Some(run.definition.flow_kind),
        acquisition_datetime: acquired,
        metadata,
        artifacts: manifest,
        visible_to: opts.visible_to.clone(),
        published_at: Utc::now(),
    };
    let started = clock::now();
    match services.catalog.publish(&record).await {
        Ok(()) => {}
        Err(e) if e.kind == StepErrorKind::Conflict => {
            log::info!("flow {flow_id}: record {} was already published", record.record_id);
        }
        Err(e) => return fail(run, StepName::Publication, Some(started), e),
    }
    let now = clock::now();
    run.timings.push(StepTiming {
        step: StepName::Publication,
        active_start: started,
        active_end: now,
    });
    run.record_id = Some(record.record_id);
    run.transition(FlowState::Succeeded).expect("publication done");
    run.t_end = Some(now);
    run
}
