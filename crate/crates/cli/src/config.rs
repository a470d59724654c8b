//! TOML configuration. Every field is optional; flags override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Deserialize;

pub const CONFIG_ENV: &str = "PICOFLOW_CONFIG";

pub const TRANSFERD_LISTEN: &str = "127.0.0.1:8401";
pub const COMPUTED_LISTEN: &str = "127.0.0.1:8402";
pub const CATALOGD_LISTEN: &str = "127.0.0.1:8403";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    /// Bearer token to principal, accepted by every service.
    #[serde(default)]
    pub tokens: BTreeMap<String, String>,
    #[serde(default)]
    pub watcher: WatcherSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub transferd: TransferdSection,
    #[serde(default)]
    pub computed: ComputedSection,
    #[serde(default)]
    pub catalogd: CatalogdSection,
    #[serde(default)]
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatcherSection {
    pub watch_dir: Option<PathBuf>,
    pub glob: Option<String>,
    pub stability_window: Option<f64>,
    pub poll_period: Option<f64>,
    pub journal: Option<PathBuf>,
    pub run_log: Option<PathBuf>,
}

/// Client side of a flow: where the services are and how flows behave.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub token: Option<String>,
    pub dest_root: Option<String>,
    pub results_root: Option<String>,
    pub visible_to: Option<Vec<String>>,
    pub analysis_timeout: Option<f64>,
    pub poll_initial: Option<f64>,
    pub poll_factor: Option<f64>,
    pub poll_cap: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferdSection {
    pub listen: Option<String>,
    /// Where clients reach the service; defaults to `http://{listen}`.
    pub url: Option<String>,
    pub root: Option<PathBuf>,
    pub max_bytes_per_second: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputedSection {
    pub listen: Option<String>,
    pub url: Option<String>,
    pub data_root: Option<PathBuf>,
    pub provision_delay: Option<f64>,
    pub idle_timeout: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogdSection {
    pub listen: Option<String>,
    pub url: Option<String>,
    pub log: Option<PathBuf>,
    pub artifact_root: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    pub publishers: Option<Vec<String>>,
    pub cors: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub template: Option<PathBuf>,
    pub dest_dir: Option<PathBuf>,
    pub period: Option<f64>,
    pub duration: Option<f64>,
    pub unique_names: Option<bool>,
    pub run_log: Option<PathBuf>,
    pub start_period: Option<f64>,
}

impl GlobalConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("config {}", path.display()))
    }

    /// `--config`, then `$PICOFLOW_CONFIG`, then built-in defaults.
    pub fn resolve(flag: Option<&Path>) -> anyhow::Result<Self> {
        match flag {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}

pub fn client_url(url: &Option<String>, listen: &Option<String>, default_listen: &str) -> String {
    match (url, listen) {
        (Some(u), _) => u.trim_end_matches('/').to_string(),
        (None, Some(l)) => format!("http://{l}"),
        (None, None) => format!("http://{default_listen}"),
    }
}

pub fn seconds(name: &str, value: f64) -> anyhow::Result<Duration> {
    if !value.is_finite() || value < 0.0 {
        bail!("{name} must be a non-negative number of seconds, got {value}");
    }
    Ok(Duration::from_secs_f64(value))
}
