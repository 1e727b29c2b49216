//! Line-delimited manifest files.
//!
//! One JSON object per line with a `record_type` of `subject`, `recording` or
//! `transcript` and exactly that record's fields. Audio paths are relative to
//! the manifest's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use riskfusion_core::{DatasetManifest, RecordingRef, SubjectRecord, TaskKind, Transcript, Violation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown task {value:?}")]
    UnknownTask { line: usize, value: String },
    #[error("line {line}: duplicate {kind} for {subject_id}/{task}")]
    Duplicate { line: usize, kind: &'static str, subject_id: String, task: TaskKind },
    #[error("line {line}: duplicate subject {subject_id}")]
    DuplicateSubject { line: usize, subject_id: String },
    #[error("line {line}: {kind} references unknown subject {subject_id}")]
    DanglingSubject { line: usize, kind: &'static str, subject_id: String },
    #[error("manifest violates invariants: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "lowercase")]
pub enum ManifestLine {
    Subject(SubjectRecord),
    Recording(RecordingRef),
    Transcript(Transcript),
}

pub fn parse_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    parse_manifest_str(&text)
}

pub fn parse_manifest_str(text: &str) -> Result<DatasetManifest, ManifestError> {
    let mut m = DatasetManifest::default();
    let mut record_lines = Vec::new();
    let mut subjects = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| ManifestError::Malformed { line, reason: e.to_string() })?;
        if let Some(task) = value.get("task") {
            let ok = task.as_str().is_some_and(|t| t.parse::<TaskKind>().is_ok());
            if !ok {
                return Err(ManifestError::UnknownTask { line, value: task.to_string().trim_matches('"').into() });
            }
        }
        let record: ManifestLine =
            serde_json::from_value(value).map_err(|e| ManifestError::Malformed { line, reason: e.to_string() })?;
        match record {
            ManifestLine::Subject(s) => {
                if !subjects.insert(s.subject_id.clone()) {
                    return Err(ManifestError::DuplicateSubject { line, subject_id: s.subject_id });
                }
                m.subjects.push(s);
            }
            ManifestLine::Recording(r) => {
                record_lines.push((line, "recording", r.subject_id.clone(), r.task));
                m.recordings.push(r);
            }
            ManifestLine::Transcript(t) => {
                record_lines.push((line, "transcript", t.subject_id.clone(), t.task));
                m.transcripts.push(t);
            }
        }
    }
    // Subjects may appear after the records that reference them.
    let mut seen = BTreeSet::new();
    for (line, kind, subject_id, task) in record_lines {
        if !subjects.contains(&subject_id) {
            return Err(ManifestError::DanglingSubject { line, kind, subject_id });
        }
        if !seen.insert((kind, subject_id.clone(), task)) {
            return Err(ManifestError::Duplicate { line, kind, subject_id, task });
        }
    }
    let report = m.validate();
    if !report.is_valid() {
        return Err(ManifestError::Invalid(report.violations));
    }
    Ok(m)
}

/// Subjects, then recordings, then transcripts, one per line.
pub fn serialize_manifest(m: &DatasetManifest) -> String {
    let mut out = String::new();
    let lines = m
        .subjects
        .iter()
        .cloned()
        .map(ManifestLine::Subject)
        .chain(m.recordings.iter().cloned().map(ManifestLine::Recording))
        .chain(m.transcripts.iter().cloned().map(ManifestLine::Transcript));
    for l in lines {
        out.push_str(&serde_json::to_string(&l).expect("manifest records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> std::io::Result<()> {
    crate::cache::write_atomic(path, serialize_manifest(m).as_bytes())
}

/// Resolves a manifest-relative path.
pub fn resolve(manifest_dir: &Path, uri: &str) -> PathBuf {
    let p = Path::new(uri);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_dir.join(p)
    }
}
