use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use picoflow_core::analysis::ArtifactManifest;
use picoflow_core::emdlite::{encode, ExperimentMetadata};
use picoflow_core::protocol::{CatalogRecord, PUBLIC};
use picoflow_core::synth::{synthesize, SynthConfig, SynthKind, Synthesis};
use rand::seq::IndexedRandom;
use rand::Rng;
use uuid::Uuid;

pub const PRINCIPALS: [&str; 4] = ["alice", "bob", "carol", "dave"];

const WORDS: [&str; 12] = [
    "gold", "nanoparticles", "carbon", "copper", "oxide", "film", "grain", "boundary", "Au", "lattice", "defect",
    "catalyst",
];

/// Synthesizes an EMD-lite file and writes it to `path`.
pub fn write_synth(kind: SynthKind, shape: [usize; 3], seed: u64, path: &Path) -> Synthesis {
    let s = synthesize(&SynthConfig::new(kind, shape, seed)).expect("synthesize");
    std::fs::write(path, encode(&s.file).expect("encode")).expect("write fixture");
    s
}

/// Random records spread over January 2023, with a few exact timestamp ties
/// and a mix of public and private visibility.
pub fn random_corpus(n: usize, rng: &mut impl Rng) -> Vec<CatalogRecord> {
    let base = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let when = if i > 0 && rng.random_bool(0.05) {
            let other: &CatalogRecord = &out[rng.random_range(0..i)];
            other.acquisition_datetime.clone()
        } else {
            (base + Duration::seconds(rng.random_range(0..31 * 86_400))).to_rfc3339()
        };
        let nwords = rng.random_range(1..=4);
        let desc: Vec<&str> = (0..nwords).map(|_| *WORDS.choose(rng).unwrap()).collect();
        let mut m = ExperimentMetadata::example(&when);
        m.sample.description = desc.join(" ");
        m.sample.elements = vec![["Au", "Cu", "O", "C"].choose(rng).unwrap().to_string()];
        let visible_to = match rng.random_range(0..4) {
            0 => vec![PUBLIC.to_string()],
            1 => vec![PRINCIPALS.choose(rng).unwrap().to_string()],
            2 => PRINCIPALS.choose_multiple(rng, 2).map(|p| p.to_string()).collect(),
            _ => vec![PUBLIC.to_string(), PRINCIPALS.choose(rng).unwrap().to_string()],
        };
        out.push(CatalogRecord {
            record_id: Uuid::from_u128(rng.random()),
            flow_id: Uuid::from_u128(rng.random()),
            flow_kind: None,
            acquisition_datetime: when,
            metadata: serde_json::to_value(&m).unwrap(),
            artifacts: ArtifactManifest::default(),
            visible_to,
            published_at: base,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusQuery {
    pub text: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
    pub principal: Option<&'static str>,
}

/// Text-only, date-only or combined queries over the corpus vocabulary and
/// date span. Date bounds alternate between bare dates and timestamps.
pub fn random_query(rng: &mut impl Rng) -> CorpusQuery {
    let base = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let shape = rng.random_range(0..3);
    let text = (shape != 1).then(|| {
        let n = rng.random_range(1..=2);
        (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    });
    let (from, to) = if shape != 0 {
        let a = rng.random_range(0..31 * 86_400);
        let b = rng.random_range(a..=31 * 86_400);
        let (fa, fb) = (base + Duration::seconds(a), base + Duration::seconds(b));
        if rng.random_bool(0.5) {
            (Some(fa.format("%Y-%m-%d").to_string()), Some(fb.format("%Y-%m-%d").to_string()))
        } else {
            (Some(fa.to_rfc3339()), Some(fb.to_rfc3339()))
        }
    } else {
        (None, None)
    };
    let principal = match rng.random_range(0..5) {
        0 => None,
        i => Some(PRINCIPALS[i - 1]),
    };
    CorpusQuery { text, from, to, principal }
}

fn words_of(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn strings_of(v: &serde_json::Value, out: &mut Vec<String>) {
    match v {
        serde_json::Value::String(s) => out.push(s.clone()),
        serde_json::Value::Array(a) => a.iter().for_each(|x| strings_of(x, out)),
        serde_json::Value::Object(m) => m.values().for_each(|x| strings_of(x, out)),
        _ => {}
    }
}

fn bound(text: &str, end: bool) -> chrono::DateTime<Utc> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(text) {
        return t.with_timezone(&Utc);
    }
    let d = chrono::NaiveDate::parse_from_str(text, "%Y-%m-%d").expect("oracle bound");
    let start = d.and_hms_opt(0, 0, 0).unwrap().and_utc();
    if end {
        start + Duration::days(1) - Duration::nanoseconds(1)
    } else {
        start
    }
}

/// Linear-scan reference for catalog search: ids of every matching record in
/// result order.
pub fn oracle_search(records: &[CatalogRecord], q: &CorpusQuery) -> Vec<Uuid> {
    let wanted = q.text.as_deref().map(words_of).unwrap_or_default();
    let from = q.from.as_deref().map(|t| bound(t, false));
    let to = q.to.as_deref().map(|t| bound(t, true));
    let mut hits: Vec<(chrono::DateTime<Utc>, Uuid)> = Vec::new();
    for r in records {
        let visible = r
            .visible_to
            .iter()
            .any(|v| v == PUBLIC || Some(v.as_str()) == q.principal);
        if !visible {
            continue;
        }
        let when = chrono::DateTime::parse_from_rfc3339(&r.acquisition_datetime)
            .unwrap()
            .with_timezone(&Utc);
        if from.is_some_and(|f| when < f) || to.is_some_and(|t| when > t) {
            continue;
        }
        let mut strings = vec![r.record_id.to_string(), r.flow_id.to_string()];
        strings_of(&r.metadata, &mut strings);
        let have: Vec<String> = strings.iter().flat_map(|s| words_of(s)).collect();
        if wanted.iter().all(|w| have.contains(w)) {
            hits.push((when, r.record_id));
        }
    }
    hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    hits.into_iter().map(|(_, id)| id).collect()
}
