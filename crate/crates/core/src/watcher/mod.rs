//! Polling directory watcher with a crash-safe checkpoint journal.
//!
//! A file triggers a flow once its size and mtime have held still for the
//! stability window and its (path, size, digest) is not yet journaled. The
//! journal entry is made durable before the trigger is handed out.

mod journal;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant, SystemTime};

use chrono::{DateTime, Utc};

pub use journal::{should_process, CheckpointJournal, JournalEntry};

use crate::digest::sha256_file;

#[derive(Debug, Clone)]
pub struct WatchConfig {
    pub watch_dir: PathBuf,
    pub glob: String,
    pub stability_window: Duration,
    pub poll_period: Duration,
}

impl WatchConfig {
    pub fn new(watch_dir: impl Into<PathBuf>) -> Self {
        Self {
            watch_dir: watch_dir.into(),
            glob: "*.emdl".to_string(),
            stability_window: Duration::from_secs(2),
            poll_period: Duration::from_secs(1),
        }
    }

    pub fn validate(&self) -> Result<(), WatchError> {
        if !self.watch_dir.is_dir() {
            return Err(WatchError::Config(format!(
                "watch dir {} does not exist",
                self.watch_dir.display()
            )));
        }
        if self.stability_window < self.poll_period {
            return Err(WatchError::Config(
                "stability window must be at least one poll period".into(),
            ));
        }
        if self.poll_period.is_zero() {
            return Err(WatchError::Config("poll period must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WatchError {
    #[error("watch config: {0}")]
    Config(String),
    #[error("bad glob pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("journal write failed, halting: {0}")]
    Journal(std::io::Error),
    #[error("cannot list watch dir: {0}")]
    List(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trigger {
    pub path: PathBuf,
    pub size: u64,
    pub sha256: String,
    /// Timestamp of the journal entry that recorded this trigger.
    pub triggered_at: DateTime<Utc>,
}

impl From<&JournalEntry> for Trigger {
    fn from(e: &JournalEntry) -> Self {
        Self {
            path: PathBuf::from(&e.path),
            size: e.size,
            sha256: e.sha256.clone(),
            triggered_at: e.triggered_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Observation {
    size: u64,
    mtime: Option<SystemTime>,
}

#[derive(Debug)]
pub struct Watcher {
    config: WatchConfig,
    pattern: glob::Pattern,
    pending: HashMap<PathBuf, (Observation, Instant)>,
    settled: HashMap<PathBuf, Observation>,
}

impl Watcher {
    pub fn new(config: WatchConfig) -> Result<Self, WatchError> {
        config.validate()?;
        let pattern = glob::Pattern::new(&config.glob)?;
        Ok(Self {
            config,
            pattern,
            pending: HashMap::new(),
            settled: HashMap::new(),
        })
    }

    pub fn config(&self) -> &WatchConfig {
        &self.config
    }

    /// One pass over the directory. Returns how many triggers fired.
    pub fn scan(
        &mut self,
        journal: &mut CheckpointJournal,
        sink: &mut dyn FnMut(Trigger),
        stop: &AtomicBool,
    ) -> Result<usize, WatchError> {
        let mut candidates = Vec::new();
        for entry in std::fs::read_dir(&self.config.watch_dir).map_err(WatchError::List)? {
            let Ok(entry) = entry else { continue };
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if !self.pattern.matches(name) {
                continue;
            }
            match entry.metadata() {
                Ok(md) if md.is_file() => candidates.push((
                    entry.path(),
                    Observation {
                        size: md.len(),
                        mtime: md.modified().ok(),
                    },
                )),
                Ok(_) => {}
                Err(e) => log::warn!("{}: cannot stat: {e}", entry.path().display()),
            }
        }
        candidates.sort_by(|a, b| a.0.cmp(&b.0));

        let present: std::collections::HashSet<_> = candidates.iter().map(|(p, _)| p.clone()).collect();
        self.pending.retain(|p, _| present.contains(p));
        self.settled.retain(|p, _| present.contains(p));

        let now = Instant::now();
        let mut fired = 0;
        for (path, obs) in candidates {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            if self.settled.get(&path) == Some(&obs) {
                continue;
            }
            self.settled.remove(&path);
            let since = match self.pending.get(&path) {
                Some((seen, since)) if *seen == obs => *since,
                _ => {
                    self.pending.insert(path.clone(), (obs, now));
                    continue;
                }
            };
            if now.duration_since(since) < self.config.stability_window {
                continue;
            }

            let (digest, hashed_len) = match sha256_file(&path) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("{}: unreadable, will retry: {e}", path.display());
                    continue;
                }
            };
            if hashed_len != obs.size {
                // still being written
                self.pending.insert(path.clone(), (Observation { size: hashed_len, ..obs }, now));
                continue;
            }
            let key = path.to_string_lossy().into_owned();
            if should_process(&key, obs.size, &digest, journal) {
                let entry = JournalEntry {
                    path: key,
                    size: obs.size,
                    sha256: digest,
                    triggered_at: Utc::now(),
                };
                journal.append(entry.clone()).map_err(WatchError::Journal)?;
                log::info!("new file {}", path.display());
                sink(Trigger::from(&entry));
                fired += 1;
            }
            self.pending.remove(&path);
            self.settled.insert(path, obs);
        }
        Ok(fired)
    }
}

/// Scans every poll period until `stop` is set. Returns only on stop or on a
/// journal failure.
pub fn watch(
    config: WatchConfig,
    journal: &mut CheckpointJournal,
    sink: &mut dyn FnMut(Trigger),
    stop: &AtomicBool,
) -> Result<(), WatchError> {
    let mut watcher = Watcher::new(config)?;
    let period = watcher.config.poll_period;
    while !stop.load(Ordering::SeqCst) {
        match watcher.scan(journal, sink, stop) {
            Ok(_) => {}
            Err(WatchError::List(e)) => log::warn!("scan failed, retrying: {e}"),
            Err(e) => return Err(e),
        }
        let deadline = Instant::now() + period;
        while !stop.load(Ordering::SeqCst) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            std::thread::sleep(left.min(Duration::from_millis(20)));
        }
    }
    Ok(())
}
