use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::emdlite::{self, EmdLiteFile, FILE_EXTENSION};

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub template_file: PathBuf,
    pub period: Duration,
    pub duration: Duration,
    pub dest_dir: PathBuf,
    pub unique_names: bool,
}

impl GeneratorConfig {
    pub fn new(
        template_file: impl Into<PathBuf>,
        dest_dir: impl Into<PathBuf>,
        period: Duration,
        duration: Duration,
    ) -> Self {
        Self {
            template_file: template_file.into(),
            period,
            duration,
            dest_dir: dest_dir.into(),
            unique_names: true,
        }
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        if self.period.is_zero() {
            return Err(GenerateError::config("period must be > 0"));
        }
        if self.duration < self.period {
            return Err(GenerateError::config("duration must be at least one period"));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateErrorKind {
    #[error("generator config: {0}")]
    Config(String),
    #[error("template {path}: {source}")]
    Template {
        path: PathBuf,
        source: emdlite::EmdError,
    },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A failed run, with the number of files already dropped.
#[derive(Debug, thiserror::Error)]
#[error("{kind} (after {dropped} files)")]
pub struct GenerateError {
    pub dropped: usize,
    pub kind: GenerateErrorKind,
}

impl GenerateError {
    fn config(msg: &str) -> Self {
        Self {
            dropped: 0,
            kind: GenerateErrorKind::Config(msg.to_string()),
        }
    }
}

/// Number of drops a run makes: one at the start of every whole period.
pub fn drop_count(duration: Duration, period: Duration) -> usize {
    (duration.as_nanos() / period.as_nanos().max(1)) as usize
}

/// Copies the template into `dest_dir` once per period, the i-th copy at
/// `start + i * period`. Each unique copy gets its own file name and
/// acquisition time, so its digest differs from every other copy.
///
/// Copies appear atomically: they are written under a dot-prefixed name and
/// renamed into place. Returns early, with the count so far, if `stop` is set.
pub fn generate(config: &GeneratorConfig, stop: Option<&AtomicBool>) -> Result<usize, GenerateError> {
    config.validate()?;
    let template_bytes = std::fs::read(&config.template_file).map_err(|e| GenerateError {
        dropped: 0,
        kind: GenerateErrorKind::Template {
            path: config.template_file.clone(),
            source: e.into(),
        },
    })?;
    let template = emdlite::decode(&template_bytes).map_err(|source| GenerateError {
        dropped: 0,
        kind: GenerateErrorKind::Template {
            path: config.template_file.clone(),
            source,
        },
    })?;
    let stem = config
        .template_file
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("drop")
        .to_string();

    std::fs::create_dir_all(&config.dest_dir).map_err(|source| GenerateError {
        dropped: 0,
        kind: GenerateErrorKind::Write {
            path: config.dest_dir.clone(),
            source,
        },
    })?;

    let n = drop_count(config.duration, config.period);
    let start = Instant::now();
    let mut last_stamp: Option<DateTime<Utc>> = None;
    for i in 0..n {
        let due = start + config.period * i as u32;
        if !sleep_until(due, stop) {
            return Ok(i);
        }
        let (name, bytes) = if config.unique_names {
            let mut stamp = Utc::now();
            if let Some(prev) = last_stamp.filter(|p| stamp <= *p) {
                stamp = prev + chrono::Duration::milliseconds(1);
            }
            last_stamp = Some(stamp);
            let name = format!(
                "{stem}_{}_{i:04}.{FILE_EXTENSION}",
                stamp.format("%Y%m%dT%H%M%S%.3fZ")
            );
            (name, restamp(&template, stamp, &config.template_file, i)?)
        } else {
            (format!("{stem}.{FILE_EXTENSION}"), template_bytes.clone())
        };
        drop_file(&config.dest_dir, &name, &bytes).map_err(|source| GenerateError {
            dropped: i,
            kind: GenerateErrorKind::Write {
                path: config.dest_dir.join(&name),
                source,
            },
        })?;
        log::debug!("dropped {name}");
    }
    Ok(n)
}

fn restamp(
    template: &EmdLiteFile,
    stamp: DateTime<Utc>,
    path: &Path,
    dropped: usize,
) -> Result<Vec<u8>, GenerateError> {
    let mut copy = template.clone();
    copy.metadata.acquisition_datetime = stamp.to_rfc3339_opts(SecondsFormat::Millis, true);
    emdlite::encode(&copy).map_err(|source| GenerateError {
        dropped,
        kind: GenerateErrorKind::Template {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn drop_file(dir: &Path, name: &str, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.part"));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, dir.join(name))
}

/// Sleeps until `due`. Returns false if `stop` was raised first.
fn sleep_until(due: Instant, stop: Option<&AtomicBool>) -> bool {
    loop {
        if stop.is_some_and(|s| s.load(Ordering::SeqCst)) {
            return false;
        }
        let left = due.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return true;
        }
        std::thread::sleep(left.min(Duration::from_millis(50)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emdlite::{decode, encode, ExperimentMetadata};
    use std::collections::HashSet;

    fn template(dir: &Path) -> PathBuf {
        let file = EmdLiteFile {
            metadata: ExperimentMetadata::example("2023-01-01T00:00:00Z"),
            datasets: vec![],
        };
        let p = dir.join("tpl.emdl");
        std::fs::write(&p, encode(&file).unwrap()).unwrap();
        p
    }

    #[test]
    fn counts() {
        let s = Duration::from_secs;
        assert_eq!(drop_count(s(10), s(2)), 5);
        assert_eq!(drop_count(s(3600), s(30)), 120);
        assert_eq!(drop_count(s(3600), s(120)), 30);
        assert_eq!(drop_count(s(60), s(3)), 20);
        assert_eq!(drop_count(Duration::from_millis(1999), s(1)), 1);
    }

    #[test]
    fn validation() {
        let c = GeneratorConfig::new("t", "d", Duration::ZERO, Duration::from_secs(1));
        assert!(c.validate().is_err());
        let c = GeneratorConfig::new("t", "d", Duration::from_secs(2), Duration::from_secs(1));
        assert!(c.validate().is_err());
    }

    #[test]
    fn unique_copies_differ_and_are_timed() {
        let dir = tempfile::tempdir().unwrap();
        let tpl = template(dir.path());
        let dest = dir.path().join("out");
        std::fs::create_dir(&dest).unwrap();
        let c = GeneratorConfig::new(&tpl, &dest, Duration::from_millis(100), Duration::from_millis(500));
        let t0 = Instant::now();
        assert_eq!(generate(&c, None).unwrap(), 5);
        let elapsed = t0.elapsed();
        assert!(elapsed >= Duration::from_millis(400) && elapsed < Duration::from_millis(900));

        let mut digests = HashSet::new();
        let mut stamps = HashSet::new();
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&dest).unwrap() {
            let p = entry.unwrap().path();
            names.push(p.file_name().unwrap().to_string_lossy().into_owned());
            let bytes = std::fs::read(&p).unwrap();
            digests.insert(crate::digest::sha256_hex(&bytes));
            stamps.insert(decode(&bytes).unwrap().metadata.acquisition_datetime);
        }
        assert_eq!(names.len(), 5);
        assert!(names.iter().all(|n| n.starts_with("tpl_") && n.ends_with(".emdl")));
        assert_eq!(digests.len(), 5);
        assert_eq!(stamps.len(), 5);
    }

    #[test]
    fn non_unique_copies_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let tpl = template(dir.path());
        let dest = dir.path().join("out");
        std::fs::create_dir(&dest).unwrap();
        let c = GeneratorConfig {
            unique_names: false,
            ..GeneratorConfig::new(&tpl, &dest, Duration::from_millis(20), Duration::from_millis(60))
        };
        assert_eq!(generate(&c, None).unwrap(), 3);
        let files: Vec<_> = std::fs::read_dir(&dest).unwrap().collect();
        assert_eq!(files.len(), 1);
        assert_eq!(std::fs::read(dest.join("tpl.emdl")).unwrap(), std::fs::read(&tpl).unwrap());
    }

    #[test]
    fn unwritable_destination_reports_count() {
        let dir = tempfile::tempdir().unwrap();
        let tpl = template(dir.path());
        // a regular file where the directory should be
        let blocked = dir.path().join("blocked");
        std::fs::write(&blocked, b"").unwrap();
        let c = GeneratorConfig::new(&tpl, &blocked, Duration::from_millis(10), Duration::from_millis(30));
        let err = generate(&c, None).unwrap_err();
        assert_eq!(err.dropped, 0);
        assert!(matches!(err.kind, GenerateErrorKind::Write { .. }));
    }

    #[test]
    fn stop_flag_ends_early() {
        let dir = tempfile::tempdir().unwrap();
        let tpl = template(dir.path());
        let stop = AtomicBool::new(true);
        let c = GeneratorConfig::new(&tpl, dir.path(), Duration::from_secs(1), Duration::from_secs(10));
        assert_eq!(generate(&c, Some(&stop)).unwrap(), 0);
    }
}
