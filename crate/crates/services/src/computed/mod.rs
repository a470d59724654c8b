//! Remote compute endpoint with a simulated batch node.
//!
//! Tasks name a pre-registered function. The single node starts cold; the
//! first submission triggers provisioning and later ones reuse the warm node
//! until it has idled for `idle_timeout`. Tasks run one at a time, FIFO.

mod client;
mod node;
mod registry;
mod server;

pub use client::ComputeClient;
pub use node::{NodeSimulator, NodeState, NodeView};
pub use registry::{AnalyzeArgs, AnalyzeEmdl, Registry, TaskFunction};
pub use server::{router, ComputeConfig};
