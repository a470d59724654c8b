//! Wire types shared by the services and the flow engine.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::analysis::ArtifactManifest;
use crate::flow::FlowKind;

/// Sentinel principal meaning "anyone, including anonymous callers".
pub const PUBLIC: &str = "public";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase")]
pub enum TaskPhase {
    Queued,
    WaitingForNode,
    Running,
    Succeeded {
        manifest: ArtifactManifest,
        metadata: serde_json::Value,
    },
    Failed {
        reason: String,
    },
}

impl TaskPhase {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskPhase::Succeeded { .. } | TaskPhase::Failed { .. })
    }

    /// Position in the lifecycle; phases never move backwards.
    pub fn rank(&self) -> u8 {
        match self {
            TaskPhase::Queued => 0,
            TaskPhase::WaitingForNode => 1,
            TaskPhase::Running => 2,
            TaskPhase::Succeeded { .. } | TaskPhase::Failed { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub task_id: Uuid,
    #[serde(flatten)]
    pub phase: TaskPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<Uuid>,
    pub function: String,
    pub args: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub task_id: Uuid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub record_id: Uuid,
    pub flow_id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_kind: Option<FlowKind>,
    pub acquisition_datetime: String,
    pub metadata: serde_json::Value,
    pub artifacts: ArtifactManifest,
    pub visible_to: Vec<String>,
    pub published_at: DateTime<Utc>,
}

impl CatalogRecord {
    pub fn is_visible_to(&self, principal: Option<&str>) -> bool {
        self.visible_to
            .iter()
            .any(|v| v == PUBLIC || Some(v.as_str()) == principal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPage {
    pub total: usize,
    pub records: Vec<CatalogRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferStatus {
    Complete,
    Rejected,
    Corrupt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResponse {
    pub transfer_id: Uuid,
    pub status: TransferStatus,
    pub bytes: u64,
    pub sha256: String,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_status_wire_shape() {
        let s = TaskStatus {
            task_id: Uuid::nil(),
            phase: TaskPhase::WaitingForNode,
        };
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["phase"], "WaitingForNode");
        let s = TaskStatus {
            task_id: Uuid::nil(),
            phase: TaskPhase::Failed {
                reason: "corrupt input".into(),
            },
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<TaskStatus>(&text).unwrap(), s);
    }

    #[test]
    fn visibility() {
        let mut r = CatalogRecord {
            record_id: Uuid::nil(),
            flow_id: Uuid::nil(),
            flow_kind: None,
            acquisition_datetime: "2023-05-01T10:00:00Z".into(),
            metadata: serde_json::json!({}),
            artifacts: ArtifactManifest::default(),
            visible_to: vec!["alice".into()],
            published_at: Utc::now(),
        };
        assert!(r.is_visible_to(Some("alice")));
        assert!(!r.is_visible_to(Some("bob")));
        assert!(!r.is_visible_to(None));
        r.visible_to.push(PUBLIC.into());
        assert!(r.is_visible_to(None));
    }
}
