//! Stage records, the append-only run log, and the experiment config lock.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cache::write_atomic;
use crate::error::{PipelineError, Result};

pub const CONFIG_HASH_FILE: &str = "config.sha256";
pub const RUNS_FILE: &str = "runs.jsonl";
pub const STAGE_FILE: &str = "stage.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(PipelineError::io(format!("hashing {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of `paths`, keyed by their path relative to `root` when possible.
pub fn hash_files(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths.iter().map(|p| Ok((display_rel(root, p), sha256_file(p)?))).collect()
}

fn display_rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// What a completed stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_at_unix_ms: u128,
    pub duration_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

pub struct Experiment {
    pub dir: PathBuf,
    pub config_hash: String,
}

impl Experiment {
    /// Opens (creating if needed) the experiment directory and refuses to
    /// mix outputs of a different configuration.
    pub fn open(dir: PathBuf, config_hash: String) -> Result<Self> {
        fs::create_dir_all(&dir).map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        let lock = dir.join(CONFIG_HASH_FILE);
        match fs::read_to_string(&lock) {
            Ok(existing) if existing.trim() != config_hash => {
                return Err(PipelineError::ConfigMismatch {
                    dir,
                    existing: existing.trim().into(),
                    current: config_hash,
                })
            }
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                write_atomic(&lock, format!("{config_hash}\n").as_bytes())
                    .map_err(PipelineError::io(lock.display().to_string()))?;
            }
            Err(e) => return Err(PipelineError::Io { context: lock.display().to_string(), source: e }),
        }
        Ok(Self { dir, config_hash })
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.dir.join(stage)
    }

    pub fn stage_record(&self, stage: &str) -> Result<Option<StageRecord>> {
        let path = self.stage_dir(stage).join(STAGE_FILE);
        match fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b)
                .map(Some)
                .map_err(|e| PipelineError::Artifact { path, reason: e.to_string() }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(PipelineError::Io { context: path.display().to_string(), source: e }),
        }
    }

    /// True when a previous run of `stage` saw the same config and inputs
    /// and its outputs are still intact.
    pub fn is_current(&self, stage: &str, inputs: &BTreeMap<String, String>) -> Result<bool> {
        let Some(rec) = self.stage_record(stage)? else { return Ok(false) };
        if rec.config_hash != self.config_hash || &rec.inputs != inputs {
            return Ok(false);
        }
        for (rel, hash) in &rec.outputs {
            let p = self.dir.join(rel);
            if !p.exists() || &sha256_file(&p)? != hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn hash_paths(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        hash_files(&self.dir, paths)
    }

    pub fn write_stage_record(&self, rec: &StageRecord) -> Result<()> {
        let path = self.stage_dir(&rec.stage).join(STAGE_FILE);
        let text = serde_json::to_string_pretty(rec).expect("stage record serializes") + "\n";
        write_atomic(&path, text.as_bytes()).map_err(PipelineError::io(path.display().to_string()))
    }

    pub fn append_run(&self, rec: &RunRecord) -> Result<()> {
        let path = self.dir.join(RUNS_FILE);
        let mut line = serde_json::to_string(rec).expect("run record serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(PipelineError::io(path.display().to_string()))?;
        f.write_all(line.as_bytes()).map_err(PipelineError::io(path.display().to_string()))
    }
}
