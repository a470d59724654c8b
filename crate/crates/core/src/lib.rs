//! Core of picoflow: the EMD-lite codec, analysis kernels, the flow engine,
//! the directory watcher and the benchmark tooling. Network services live in
//! `picoflow-services`.

pub mod analysis;
pub mod bench;
pub mod clock;
pub mod digest;
pub mod emdlite;
pub mod flow;
pub mod protocol;
pub mod synth;
pub mod watcher;
