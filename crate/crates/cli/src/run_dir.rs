//! Run directories and their manifests.

use std::fs;
use std::path::{Path, PathBuf};

use mmrd_core::config::ExperimentConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory when written inside it.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub dataset_hash: Option<String>,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    /// Command-specific facts such as skipped samples or the chosen epoch.
    pub notes: serde_json::Map<String, serde_json::Value>,
}

pub fn code_version() -> String {
    let rev = option_env!("MMRD_GIT_REV").unwrap_or("unknown");
    format!("{}+{rev}", env!("CARGO_PKG_VERSION"))
}

/// Collects every file a command writes so the manifest can list it.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    pub fn create(out: &Path, run_id: &str, command: &str, config: &ExperimentConfig) -> CliResult<Self> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
            return Err(CliError::Usage(format!(
                "run id `{run_id}` is not a plain directory name"
            )));
        }
        let root = out.join(run_id);
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self {
            root,
            manifest: Manifest {
                run_id: run_id.to_string(),
                command: command.to_string(),
                code_version: code_version(),
                seed: config.seed,
                dataset_hash: None,
                config: config.clone(),
                artifacts: Vec::new(),
                notes: serde_json::Map::new(),
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn set_dataset_hash(&mut self, hash: String) {
        self.manifest.dataset_hash = Some(hash);
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("note serializes");
        self.manifest.notes.insert(key.to_string(), v);
    }

    /// Writes `name` inside the run directory and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.record(name.to_string(), bytes);
        Ok(path)
    }

    /// Records a file that was written elsewhere.
    pub fn record_external(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let shown = match path.strip_prefix(&self.root) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => path.to_string_lossy().into_owned(),
        };
        self.record(shown, &bytes);
        Ok(())
    }

    fn record(&mut self, path: String, bytes: &[u8]) {
        self.manifest.artifacts.retain(|a| a.path != path);
        self.manifest.artifacts.push(Artifact {
            path,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
    }

    pub fn finish(self) -> CliResult<Manifest> {
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.manifest)
    }
}
