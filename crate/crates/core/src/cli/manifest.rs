use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::harness::{hash_bytes, ExperimentConfig, CONFIG_FILE};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// sha256 of the stored `config.toml`.
    pub config_hash: String,
    pub seed: u64,
    pub network_seed: u64,
    pub family: String,
    pub variant: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub artifacts: Vec<Artifact>,
}

pub(crate) fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else if p.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(p.strip_prefix(root).unwrap_or(&p).to_path_buf());
        }
    }
    Ok(())
}

fn file_hash(path: &Path) -> Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hash_bytes(&bytes)))
}

impl RunManifest {
    /// Inventories every file under `run_dir` except the manifest itself.
    pub fn collect(run_dir: &Path, cfg: &ExperimentConfig, command: &str, started_unix_s: f64) -> Result<Self> {
        let (_, config_hash) = file_hash(&run_dir.join(CONFIG_FILE))?;
        let mut files = Vec::new();
        walk(run_dir, run_dir, &mut files)?;
        let artifacts = files
            .into_iter()
            .map(|rel| {
                let (bytes, sha256) = file_hash(&run_dir.join(&rel))?;
                let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                Ok(Artifact { path, bytes, sha256 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed: cfg.seed,
            network_seed: cfg.effective_network().rng_seed,
            family: cfg.family.to_string(),
            variant: cfg.provenance(),
            started_unix_s,
            finished_unix_s: now(),
            artifacts,
        })
    }

    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic(&run_dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Checks the stored config and every listed artifact against the manifest.
/// Returns the paths that no longer match.
pub fn verify_manifest(run_dir: &Path) -> Result<Vec<String>> {
    let m = RunManifest::read(run_dir)?;
    let mut bad = Vec::new();
    match file_hash(&run_dir.join(CONFIG_FILE)) {
        Ok((_, h)) if h == m.config_hash => {}
        _ => bad.push(CONFIG_FILE.to_string()),
    }
    for a in &m.artifacts {
        match file_hash(&run_dir.join(&a.path)) {
            Ok((n, h)) if n == a.bytes && h == a.sha256 => {}
            _ => bad.push(a.path.clone()),
        }
    }
    bad.dedup();
    Ok(bad)
}
