use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::FlowRun;

/// Append-only JSON-lines log of terminal flow runs. Safe to share between
/// concurrently finishing flows.
#[derive(Debug)]
pub struct RunLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl RunLog {
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        cut_torn_tail(&mut file, &path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, run: &FlowRun) -> io::Result<()> {
        let mut line = serde_json::to_vec(run).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.sync_data()
    }
}

/// Drops an unterminated last line left by a crash mid-append, so the next
/// append starts on a line of its own.
fn cut_torn_tail(file: &mut File, path: &Path) -> io::Result<()> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(());
    }
    let mut bytes = Vec::with_capacity(len as usize);
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        log::warn!("{}: dropping torn trailing run", path.display());
        file.set_len(keep as u64)?;
    }
    Ok(())
}

/// Reads every run in a log. A torn final line is ignored.
pub fn read_runs(path: &Path) -> io::Result<Vec<FlowRun>> {
    let reader = BufReader::new(File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let last = lines.len().saturating_sub(1);
    let mut runs = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(run) => runs.push(run),
            Err(_) if i == last => log::warn!("{}: ignoring torn final line", path.display()),
            Err(e) => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}:{}: {e}", path.display(), i + 1),
                ))
            }
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{FlowDefinition, FlowKind};

    #[test]
    fn append_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("logs/runs.jsonl");
        let log = RunLog::open(&path).unwrap();
        let a = FlowRun::new(FlowDefinition::new("a.emdl", "incoming", FlowKind::Hyperspectral), 1.0);
        let b = FlowRun::new(FlowDefinition::new("b.emdl", "incoming", FlowKind::Spatiotemporal), 2.0);
        log.append(&a).unwrap();
        log.append(&b).unwrap();
        assert_eq!(read_runs(&path).unwrap(), vec![a.clone(), b]);

        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"definition\":").unwrap();
        assert_eq!(read_runs(&path).unwrap().len(), 2);

        // reopening after the torn write keeps later appends readable
        let log = RunLog::open(&path).unwrap();
        log.append(&a).unwrap();
        assert_eq!(read_runs(&path).unwrap().len(), 3);
    }
}
