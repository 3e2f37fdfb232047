use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSeed {
    pub index: usize,
    pub seed: u64,
}

/// A per-step error series written by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricFile {
    pub file: String,
    pub columns: Vec<String>,
    pub replicate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    pub root_seed: u64,
    pub replicates: Vec<ReplicateSeed>,
    /// Effective configuration, loadable with `--config`.
    pub config: BTreeMap<String, String>,
    pub files: Vec<String>,
    pub metrics: Vec<MetricFile>,
    pub jobs: usize,
    pub wall_time_seconds: f64,
}

pub const FILE_NAME: &str = "manifest.json";

impl Manifest {
    /// Accepts the manifest file itself or the directory holding it.
    pub fn load(path: &Path) -> Result<(Manifest, PathBuf)> {
        let file = if path.is_dir() {
            path.join(FILE_NAME)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }
}
