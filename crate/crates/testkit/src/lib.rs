//! Shared test fixtures.

mod corpus;
mod proxy;

pub use corpus::{oracle_search, random_corpus, random_query, write_synth, CorpusQuery, PRINCIPALS};
pub use proxy::CorruptingProxy;
