use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use picoflow_core::protocol::CatalogRecord;

/// Append-only JSON-lines record log. A record is acknowledged only after
/// its line is on disk.
#[derive(Debug)]
pub struct RecordLog {
    path: PathBuf,
    file: File,
}

impl RecordLog {
    /// Opens the log and returns every record in it. A torn final line is
    /// cut off; a repeated record id keeps its first occurrence.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<(Self, Vec<CatalogRecord>)> {
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

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut keep = 0usize;
        let mut offset = 0usize;
        for line in text.split_inclusive('\n') {
            let complete = line.ends_with('\n');
            let body = line.trim();
            offset += line.len();
            if body.is_empty() {
                keep = offset;
                continue;
            }
            match serde_json::from_str::<CatalogRecord>(body) {
                Ok(r) if complete => {
                    keep = offset;
                    if seen.insert(r.record_id) {
                        records.push(r);
                    } else {
                        log::warn!("{}: duplicate record {} ignored", path.display(), r.record_id);
                    }
                }
                // A complete-looking last line without its newline was cut
                // mid-write.
                _ if !complete => break,
                Ok(_) => unreachable!(),
                Err(e) => {
                    return Err(io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("{}: bad record at byte {}: {e}", path.display(), offset - line.len()),
                    ))
                }
            }
        }
        if keep < text.len() {
            log::warn!("{}: dropping torn trailing record", path.display());
            file.set_len(keep as u64)?;
        }
        Ok((Self { path, file }, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &CatalogRecord) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use picoflow_core::analysis::ArtifactManifest;
    use uuid::Uuid;

    fn rec() -> CatalogRecord {
        CatalogRecord {
            record_id: Uuid::new_v4(),
            flow_id: Uuid::new_v4(),
            flow_kind: None,
            acquisition_datetime: "2023-05-01T10:00:00Z".into(),
            metadata: serde_json::json!({}),
            artifacts: ArtifactManifest::default(),
            visible_to: vec!["public".into()],
            published_at: chrono::Utc::now(),
        }
    }

    #[test]
    fn replay_handles_torn_tail_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        let (mut log, existing) = RecordLog::open(&p).unwrap();
        assert!(existing.is_empty());
        let a = rec();
        log.append(&a).unwrap();
        log.append(&a).unwrap();
        let b = rec();
        log.append(&b).unwrap();
        drop(log);
        let full = serde_json::to_string(&rec()).unwrap();
        OpenOptions::new()
            .append(true)
            .open(&p)
            .unwrap()
            .write_all(&full.as_bytes()[..full.len() / 2])
            .unwrap();

        let (mut log, records) = RecordLog::open(&p).unwrap();
        assert_eq!(records, vec![a.clone(), b.clone()]);
        let c = rec();
        log.append(&c).unwrap();
        drop(log);
        let (_, records) = RecordLog::open(&p).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2], c);
    }

    #[test]
    fn unterminated_but_parseable_tail_is_dropped() {
        // Not acknowledged: the newline is written with the record.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        std::fs::write(&p, serde_json::to_string(&rec()).unwrap()).unwrap();
        let (_, records) = RecordLog::open(&p).unwrap();
        assert!(records.is_empty());
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 0);
    }

    #[test]
    fn corrupt_middle_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.jsonl");
        let good = serde_json::to_string(&rec()).unwrap();
        std::fs::write(&p, format!("garbage\n{good}\n")).unwrap();
        assert!(RecordLog::open(&p).is_err());
    }
}
