//! Performance harness: a timed file dropper and the run-log aggregator.

mod generate;
mod report;

pub use generate::{drop_count, generate, GenerateError, GenerateErrorKind, GeneratorConfig};
pub use report::{
    aggregate, aggregate_log, median, MetricsReport, Range, ReportOptions, TOTAL_DATA_DEFINITION,
};
