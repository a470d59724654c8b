//! Flow model: one serial Transfer, Analysis, Publication run per data file.

mod backoff;
mod engine;
mod runlog;

use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::emdlite::{self, AxisKind, EmdError};
use crate::watcher::Trigger;

pub use backoff::{BackoffPolicy, InvalidPolicy};
pub use engine::{
    run_flow, CatalogService, ComputeService, FlowOptions, FlowServices, StepError, StepErrorKind,
    TransferService,
};
pub use runlog::{read_runs, RunLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlowKind {
    Hyperspectral,
    Spatiotemporal,
}

impl FlowKind {
    pub fn from_axes(axes: &[AxisKind]) -> Option<Self> {
        if axes == AxisKind::HYPERSPECTRAL {
            Some(FlowKind::Hyperspectral)
        } else if axes == AxisKind::SPATIOTEMPORAL {
            Some(FlowKind::Spatiotemporal)
        } else {
            None
        }
    }

    /// Classifies a file from its header alone; payloads are skipped.
    pub fn detect(path: &Path) -> Result<Option<Self>, EmdError> {
        let (_, descriptors) = emdlite::read_header(std::io::BufReader::new(File::open(path)?))?;
        Ok(descriptors.iter().find_map(|d| Self::from_axes(&d.axes)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDefinition {
    pub flow_id: Uuid,
    pub source_path: PathBuf,
    /// Destination prefix on the transfer server, relative to its root.
    pub dest_root: String,
    pub flow_kind: FlowKind,
}

impl FlowDefinition {
    pub fn new(source_path: impl Into<PathBuf>, dest_root: impl Into<String>, flow_kind: FlowKind) -> Self {
        Self {
            flow_id: Uuid::new_v4(),
            source_path: source_path.into(),
            dest_root: dest_root.into(),
            flow_kind,
        }
    }

    /// A flow whose id is a function of the watcher trigger, so a flow
    /// resumed after a crash keeps the id it was started with.
    pub fn for_trigger(trigger: &Trigger, dest_root: impl Into<String>, flow_kind: FlowKind) -> Self {
        Self {
            flow_id: flow_id_for(trigger),
            source_path: trigger.path.clone(),
            dest_root: dest_root.into(),
            flow_kind,
        }
    }
}

pub fn flow_id_for(trigger: &Trigger) -> Uuid {
    let stamp = trigger.triggered_at.to_rfc3339_opts(SecondsFormat::Nanos, true);
    let size = trigger.size.to_string();
    let path = trigger.path.to_string_lossy();
    derived_uuid(&[b"flow", path.as_bytes(), size.as_bytes(), trigger.sha256.as_bytes(), stamp.as_bytes()])
}

/// The catalog record id a flow publishes under. One record per flow, so a
/// duplicate-id rejection means this flow already published.
pub fn record_id_for(flow_id: Uuid) -> Uuid {
    derived_uuid(&[b"record", flow_id.as_bytes()])
}

/// Version-4-shaped UUID from the SHA-256 of length-prefixed parts.
fn derived_uuid(parts: &[&[u8]]) -> Uuid {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    let digest = h.finalize();
    let mut bytes = [0u8; 16];
    bytes.copy_from_slice(&digest[..16]);
    uuid::Builder::from_random_bytes(bytes).into_uuid()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StepName {
    Transfer,
    Analysis,
    Publication,
}

impl StepName {
    pub const ALL: [StepName; 3] = [StepName::Transfer, StepName::Analysis, StepName::Publication];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: StepName,
    pub active_start: f64,
    pub active_end: f64,
}

impl StepTiming {
    pub fn active(&self) -> f64 {
        self.active_end - self.active_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum FlowState {
    Pending,
    Transferring,
    Analyzing,
    Publishing,
    Succeeded,
    Failed { step: StepName, reason: String },
}

impl FlowState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, FlowState::Succeeded | FlowState::Failed { .. })
    }

    fn active_step(&self) -> Option<StepName> {
        match self {
            FlowState::Transferring => Some(StepName::Transfer),
            FlowState::Analyzing => Some(StepName::Analysis),
            FlowState::Publishing => Some(StepName::Publication),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: FlowState, to: FlowState },
    #[error("flow has not succeeded (state {0:?})")]
    NotSucceeded(FlowState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRun {
    pub definition: FlowDefinition,
    #[serde(flatten)]
    pub state: FlowState,
    /// Monotonic seconds, see [`crate::clock`].
    pub t_start: f64,
    pub t_end: Option<f64>,
    pub timings: Vec<StepTiming>,
    /// Wall-clock start, for display only.
    pub started_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_transferred: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<Uuid>,
}

impl FlowRun {
    pub fn new(definition: FlowDefinition, t_start: f64) -> Self {
        Self {
            definition,
            state: FlowState::Pending,
            t_start,
            t_end: None,
            timings: Vec::new(),
            started_at: Utc::now(),
            bytes_transferred: None,
            record_id: None,
        }
    }

    /// Moves to `to` if the edge exists:
    /// Pending -> Transferring -> Analyzing -> Publishing -> Succeeded, and
    /// any active state -> Failed for that same step.
    pub fn transition(&mut self, to: FlowState) -> Result<(), StateError> {
        use FlowState::*;
        let legal = match (&self.state, &to) {
            (Pending, Transferring)
            | (Transferring, Analyzing)
            | (Analyzing, Publishing)
            | (Publishing, Succeeded) => true,
            (from, Failed { step, .. }) => from.active_step() == Some(*step),
            _ => false,
        };
        if !legal {
            return Err(StateError::IllegalTransition {
                from: self.state.clone(),
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    pub fn total_runtime(&self) -> Option<f64> {
        self.t_end.map(|end| end - self.t_start)
    }

    pub fn active_total(&self) -> f64 {
        self.timings.iter().map(StepTiming::active).sum()
    }

    pub fn timing(&self, step: StepName) -> Option<&StepTiming> {
        self.timings.iter().find(|t| t.step == step)
    }
}

/// Total runtime not spent inside a step's active window.
pub fn overhead(run: &FlowRun) -> Result<f64, StateError> {
    match (&run.state, run.total_runtime()) {
        (FlowState::Succeeded, Some(total)) => Ok((total - run.active_total()).max(0.0)),
        _ => Err(StateError::NotSucceeded(run.state.clone())),
    }
}
