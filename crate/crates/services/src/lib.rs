//! HTTP services for picoflow: checksummed transfer (`transferd`), a compute
//! endpoint with a simulated batch node (`computed`) and the metadata
//! catalog (`catalogd`), each with a client that plugs into the flow engine.

pub mod auth;
pub mod catalogd;
pub mod computed;
pub mod http;
pub mod local;
pub mod pipeline;
pub mod transferd;

pub use local::{LocalStack, LocalStackOptions, LOCAL_PRINCIPAL, LOCAL_TOKEN};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, PipelineSummary};
