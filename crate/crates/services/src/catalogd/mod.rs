//! Metadata catalog with free-text and date-range search.
//!
//! Records are appended to a JSON-lines log, fsynced, and only then indexed
//! and acknowledged. Startup replays the log.

mod client;
mod index;
mod record_log;
mod server;

pub use client::{CatalogClient, SearchParams};
pub use index::{
    parse_bound, record_tokens, tokenize, validate_record, Index, InsertError, Query, RecordError, DEFAULT_LIMIT,
    MAX_LIMIT,
};
pub use record_log::RecordLog;
pub use server::{parse_query, router, CatalogConfig, CatalogStartError};
