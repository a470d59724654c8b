use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use picoflow_core::analysis::{analyze_emdl, ArtifactManifest, FsInput};
use serde::Deserialize;

use crate::http::safe_relpath;

/// A pre-registered task. `check` runs at submission so bad arguments are
/// refused before anything is queued.
pub trait TaskFunction: Send + Sync {
    fn check(&self, args: &serde_json::Value) -> Result<(), String>;

    /// Executes under `data_root`. Returns the artifact manifest, with paths
    /// relative to `data_root`, and the extracted metadata.
    fn run(&self, data_root: &Path, args: &serde_json::Value) -> Result<(ArtifactManifest, serde_json::Value), String>;
}

#[derive(Clone, Default)]
pub struct Registry {
    functions: BTreeMap<String, Arc<dyn TaskFunction>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.functions.keys()).finish()
    }
}

impl Registry {
    /// Registry holding the built-in `analyze_emdl`.
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        r.register("analyze_emdl", AnalyzeEmdl);
        r
    }

    pub fn register(&mut self, name: impl Into<String>, f: impl TaskFunction + 'static) {
        self.functions.insert(name.into(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn TaskFunction>> {
        self.functions.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeArgs {
    pub input: String,
    pub out_dir: String,
}

impl AnalyzeArgs {
    pub fn parse(args: &serde_json::Value) -> Result<Self, String> {
        let parsed: AnalyzeArgs = serde_path_to_error::deserialize(args)
            .map_err(|e| format!("args.{}: {}", e.path(), e.inner()))?;
        for (field, value) in [("input", &parsed.input), ("out_dir", &parsed.out_dir)] {
            if !safe_relpath(value) {
                return Err(format!("args.{field}: must be a relative path inside the data root"));
            }
        }
        Ok(parsed)
    }
}

/// Metadata extraction and artifact rendering from one read of the input.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnalyzeEmdl;

impl TaskFunction for AnalyzeEmdl {
    fn check(&self, args: &serde_json::Value) -> Result<(), String> {
        AnalyzeArgs::parse(args).map(|_| ())
    }

    fn run(&self, data_root: &Path, args: &serde_json::Value) -> Result<(ArtifactManifest, serde_json::Value), String> {
        let args = AnalyzeArgs::parse(args)?;
        let out = analyze_emdl(&FsInput, &data_root.join(&args.input), &data_root.join(&args.out_dir))
            .map_err(|e| e.to_string())?;
        let metadata = serde_json::to_value(&out.metadata).map_err(|e| e.to_string())?;
        Ok((out.manifest.rebase(&args.out_dir), metadata))
    }
}
