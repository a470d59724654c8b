use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};

use chrono::{DateTime, NaiveDate, NaiveTime, Utc};
use picoflow_core::emdlite::{parse_iso8601, ExperimentMetadata};
use picoflow_core::protocol::CatalogRecord;
use uuid::Uuid;

pub const DEFAULT_LIMIT: usize = 50;
pub const MAX_LIMIT: usize = 1000;

/// Lowercased alphanumeric runs; everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Every token a record can be found by: all string leaves of its metadata
/// plus its record and flow ids.
pub fn record_tokens(record: &CatalogRecord) -> BTreeSet<String> {
    fn walk(v: &serde_json::Value, out: &mut BTreeSet<String>) {
        match v {
            serde_json::Value::String(s) => out.extend(tokenize(s)),
            serde_json::Value::Array(items) => items.iter().for_each(|i| walk(i, out)),
            serde_json::Value::Object(map) => map.values().for_each(|i| walk(i, out)),
            _ => {}
        }
    }
    let mut out = BTreeSet::new();
    walk(&record.metadata, &mut out);
    out.extend(tokenize(&record.record_id.to_string()));
    out.extend(tokenize(&record.flow_id.to_string()));
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct RecordError {
    pub path: String,
    pub message: String,
}

impl RecordError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Checks a record before it is accepted, naming the offending field.
pub fn validate_record(record: &CatalogRecord) -> Result<DateTime<Utc>, RecordError> {
    if record.visible_to.is_empty() {
        return Err(RecordError::new("visible_to", "must name at least one principal or \"public\""));
    }
    if let Some(i) = record.visible_to.iter().position(|p| p.trim().is_empty()) {
        return Err(RecordError::new(format!("visible_to[{i}]"), "empty principal"));
    }
    let acquired = parse_iso8601(&record.acquisition_datetime)
        .ok_or_else(|| RecordError::new("acquisition_datetime", "not an ISO-8601 timestamp"))?;

    let mut metadata = record.metadata.clone();
    match metadata.as_object_mut() {
        Some(map) => {
            map.remove("datasets");
        }
        None => return Err(RecordError::new("metadata", "must be a JSON object")),
    }
    let parsed: ExperimentMetadata = serde_path_to_error::deserialize(metadata).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "metadata".to_string() } else { format!("metadata.{path}") };
        RecordError::new(path, e.into_inner().to_string())
    })?;
    parsed
        .validate()
        .map_err(|e| RecordError::new(format!("metadata.{}", e.path), e.message))?;
    Ok(acquired)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Query {
    pub text: Option<String>,
    pub from: Option<DateTime<Utc>>,
    pub to: Option<DateTime<Utc>>,
    pub limit: usize,
    pub offset: usize,
}

impl Query {
    pub fn all() -> Self {
        Self {
            limit: DEFAULT_LIMIT,
            ..Default::default()
        }
    }

    pub fn matches(&self, tokens: &BTreeSet<String>, acquired: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| acquired >= f)
            && self.to.is_none_or(|t| acquired <= t)
            && self
                .text
                .as_deref()
                .is_none_or(|text| tokenize(text).iter().all(|t| tokens.contains(t)))
    }
}

/// Parses a query bound. A bare date covers the whole day: `from` starts at
/// midnight, `to` ends at the last nanosecond.
pub fn parse_bound(text: &str, end_of_day: bool) -> Option<DateTime<Utc>> {
    if let Some(t) = parse_iso8601(text) {
        return Some(t);
    }
    let date = NaiveDate::parse_from_str(text, "%Y-%m-%d").ok()?;
    let time = if end_of_day {
        NaiveTime::from_hms_nano_opt(23, 59, 59, 999_999_999)?
    } else {
        NaiveTime::MIN
    };
    Some(date.and_time(time).and_utc())
}

struct Entry {
    record: CatalogRecord,
    acquired: DateTime<Utc>,
    tokens: BTreeSet<String>,
}

/// In-memory inverted index plus a time-ordered index.
///
/// Result order is acquisition time descending, then record id ascending.
#[derive(Default)]
pub struct Index {
    entries: Vec<Entry>,
    by_id: HashMap<Uuid, usize>,
    postings: HashMap<String, Vec<usize>>,
    by_time: BTreeSet<(DateTime<Utc>, Reverse<Uuid>, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertError {
    Duplicate(Uuid),
    Invalid(RecordError),
}

impl Index {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &Uuid) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn check(&self, record: &CatalogRecord) -> Result<DateTime<Utc>, InsertError> {
        if self.contains(&record.record_id) {
            return Err(InsertError::Duplicate(record.record_id));
        }
        validate_record(record).map_err(InsertError::Invalid)
    }

    pub fn insert(&mut self, record: CatalogRecord) -> Result<(), InsertError> {
        let acquired = self.check(&record)?;
        let idx = self.entries.len();
        let tokens = record_tokens(&record);
        for t in &tokens {
            self.postings.entry(t.clone()).or_default().push(idx);
        }
        self.by_id.insert(record.record_id, idx);
        self.by_time.insert((acquired, Reverse(record.record_id), idx));
        self.entries.push(Entry {
            record,
            acquired,
            tokens,
        });
        Ok(())
    }

    pub fn get(&self, id: &Uuid) -> Option<&CatalogRecord> {
        self.by_id.get(id).map(|&i| &self.entries[i].record)
    }

    /// Returns the total match count and the requested page.
    pub fn search(&self, q: &Query, principal: Option<&str>) -> (usize, Vec<CatalogRecord>) {
        let visible = |e: &Entry| e.record.is_visible_to(principal);
        let hits: Vec<usize> = match q.text.as_deref().map(tokenize).filter(|t| !t.is_empty()) {
            Some(tokens) => {
                // Intersect postings starting from the rarest token.
                let mut lists: Vec<&Vec<usize>> = Vec::with_capacity(tokens.len());
                for t in &tokens {
                    match self.postings.get(t) {
                        Some(list) => lists.push(list),
                        None => return (0, Vec::new()),
                    }
                }
                lists.sort_by_key(|l| l.len());
                let mut hits: Vec<usize> = lists[0]
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let e = &self.entries[i];
                        visible(e) && q.matches(&e.tokens, e.acquired)
                    })
                    .collect();
                hits.sort_by(|&a, &b| {
                    let (ea, eb) = (&self.entries[a], &self.entries[b]);
                    eb.acquired
                        .cmp(&ea.acquired)
                        .then(ea.record.record_id.cmp(&eb.record.record_id))
                });
                hits
            }
            None => self
                .by_time
                .iter()
                .rev()
                .map(|&(_, _, i)| i)
                .filter(|&i| {
                    let e = &self.entries[i];
                    visible(e) && q.matches(&e.tokens, e.acquired)
                })
                .collect(),
        };
        let page = hits
            .iter()
            .skip(q.offset)
            .take(q.limit)
            .map(|&i| self.entries[i].record.clone())
            .collect();
        (hits.len(), page)
    }
}
