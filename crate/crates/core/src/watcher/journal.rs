use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub path: String,
    pub size: u64,
    pub sha256: String,
    pub triggered_at: DateTime<Utc>,
}

/// Durable set of (path, size, digest) triples that already started a flow.
///
/// One JSON object per line, fsynced per entry. A torn final line left by a
/// crash is cut off when the journal is reopened.
#[derive(Debug)]
pub struct CheckpointJournal {
    path: PathBuf,
    file: File,
    seen: HashSet<(String, u64, String)>,
    entries: Vec<JournalEntry>,
}

impl CheckpointJournal {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            log::warn!("{}: dropping torn trailing entry", path.display());
            file.set_len(complete as u64)?;
            file.seek(SeekFrom::End(0))?;
        }

        let mut journal = Self {
            path,
            file,
            seen: HashSet::new(),
            entries: Vec::new(),
        };
        for (lineno, line) in text[..complete].lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: JournalEntry = serde_json::from_str(line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", journal.path.display(), lineno + 1),
                )
            })?;
            journal.remember(entry);
        }
        Ok(journal)
    }

    fn remember(&mut self, entry: JournalEntry) {
        if self
            .seen
            .insert((entry.path.clone(), entry.size, entry.sha256.clone()))
        {
            self.entries.push(entry);
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn contains(&self, path: &str, size: u64, sha256: &str) -> bool {
        self.seen
            .contains(&(path.to_string(), size, sha256.to_string()))
    }

    /// Writes and fsyncs the entry before it becomes visible in memory.
    pub fn append(&mut self, entry: JournalEntry) -> io::Result<()> {
        let mut line = serde_json::to_vec(&entry).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        self.remember(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[JournalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[cfg(test)]
    pub(crate) fn poison_for_test(&mut self, file: File) {
        self.file = file;
    }
}

/// True iff no journal entry matches this exact (path, size, digest).
pub fn should_process(path: &str, size: u64, sha256: &str, journal: &CheckpointJournal) -> bool {
    !journal.contains(path, size, sha256)
}
