//! On-disk formats for representations and trained models.
//!
//! Representations: `<encoder_id>__<task>__<split>.f32` holds row-major
//! little-endian f32 rows; the `.idx` sidecar maps `subject_id<TAB>row`.
//! Models: a `.params.bin` blob of little-endian f64 (head, then encoder)
//! and a `.meta.json` document.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use riskfusion_core::encoder::EncoderDescriptor;
use riskfusion_core::fusion::{FusionConfig, FusionModel};
use riskfusion_core::{
    Encoder, HeadParams, HeadShape, Hyperparams, Representation, Split, TaskKind, TrainedModel, TrainingHistory,
};
use serde::{Deserialize, Serialize};

use crate::cache::{encode_component, write_atomic};
use crate::error::{PipelineError, Result};

pub fn repr_paths(dir: &Path, encoder_id: &str, task: TaskKind, split: Split) -> (PathBuf, PathBuf) {
    let stem = format!("{}__{task}__{split}", encode_component(encoder_id));
    (dir.join(format!("{stem}.f32")), dir.join(format!("{stem}.idx")))
}

/// Writes one representation file pair. All rows must share a length.
pub fn write_representations(
    dir: &Path,
    encoder_id: &str,
    task: TaskKind,
    split: Split,
    reps: &[Representation],
) -> Result<(PathBuf, PathBuf)> {
    let (data, idx) = repr_paths(dir, encoder_id, task, split);
    let mut bytes = Vec::new();
    let mut index = String::new();
    let dim = reps.first().map_or(0, |r| r.vector.len());
    for (row, r) in reps.iter().enumerate() {
        if r.vector.len() != dim || r.encoder_id != encoder_id || r.task != task {
            return Err(PipelineError::Artifact {
                path: data,
                reason: format!("row for {} does not match {encoder_id}/{task} with dimension {dim}", r.subject_id),
            });
        }
        for v in &r.vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        index.push_str(&format!("{}\t{row}\n", r.subject_id));
    }
    write_atomic(&data, &bytes).map_err(PipelineError::io(data.display().to_string()))?;
    write_atomic(&idx, index.as_bytes()).map_err(PipelineError::io(idx.display().to_string()))?;
    Ok((data, idx))
}

pub fn read_representations(
    dir: &Path,
    encoder_id: &str,
    task: TaskKind,
    split: Split,
    stage: &'static str,
) -> Result<Vec<Representation>> {
    let (data, idx) = repr_paths(dir, encoder_id, task, split);
    let bytes = read_required(&data, stage)?;
    let index = String::from_utf8(read_required(&idx, stage)?)
        .map_err(|_| PipelineError::Artifact { path: idx.clone(), reason: "not UTF-8".into() })?;
    let bad = |reason: String| PipelineError::Artifact { path: idx.clone(), reason };
    let rows: Vec<(String, usize)> = index
        .lines()
        .enumerate()
        .map(|(n, line)| {
            let (sid, row) = line.split_once('\t').ok_or_else(|| bad(format!("line {}: missing tab", n + 1)))?;
            let row = row.parse().map_err(|_| bad(format!("line {}: bad row {row:?}", n + 1)))?;
            Ok((sid.to_string(), row))
        })
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    if bytes.len() % (4 * rows.len()) != 0 {
        return Err(PipelineError::Artifact {
            path: data,
            reason: format!("{} bytes do not divide into {} rows", bytes.len(), rows.len()),
        });
    }
    let dim = bytes.len() / 4 / rows.len();
    rows.into_iter()
        .map(|(sid, row)| {
            let start = row * dim * 4;
            let chunk = bytes.get(start..start + dim * 4).ok_or_else(|| bad(format!("row {row} out of range")))?;
            let vector = chunk.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
            Representation::new(sid, task, encoder_id, vector)
                .map_err(|e| PipelineError::Artifact { path: data.clone(), reason: e.to_string() })
        })
        .collect()
}

fn read_required(path: &Path, stage: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => PipelineError::MissingArtifact { path: path.to_path_buf(), stage },
        _ => PipelineError::Io { context: path.display().to_string(), source: e },
    })
}

fn f64_blob(parts: &[&[f64]]) -> Vec<u8> {
    parts.iter().flat_map(|p| p.iter()).flat_map(|v| v.to_le_bytes()).collect()
}

fn parse_f64_blob(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(PipelineError::Artifact {
            path: path.to_path_buf(),
            reason: format!("expected {expected} parameters, found {} bytes", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("metadata serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(PipelineError::io(path.display().to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T> {
    let bytes = read_required(path, stage)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), reason: e.to_string() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub task: TaskKind,
    pub encoder: EncoderDescriptor,
    pub head_shape: HeadShape,
    pub hyperparams: Hyperparams,
    pub history: TrainingHistory,
    pub head_params: usize,
    pub encoder_params: usize,
}

pub fn model_paths(dir: &Path, encoder_id: &str, task: TaskKind) -> (PathBuf, PathBuf) {
    let stem = format!("{}__{task}", encode_component(encoder_id));
    (dir.join(format!("{stem}.params.bin")), dir.join(format!("{stem}.meta.json")))
}

pub fn save_model<E: Encoder>(dir: &Path, model: &TrainedModel<E>) -> Result<(PathBuf, PathBuf)> {
    let d = model.encoder.descriptor();
    let (params, meta_path) = model_paths(dir, &d.encoder_id, model.task);
    let meta = ModelMeta {
        model_id: model.model_id(),
        task: model.task,
        encoder: d.clone(),
        head_shape: model.head.shape(),
        hyperparams: model.hyperparams.clone(),
        history: model.history.clone(),
        head_params: model.head.param_count(),
        encoder_params: model.encoder.parameters().len(),
    };
    let blob = f64_blob(&[model.head.values(), model.encoder.parameters()]);
    write_atomic(&params, &blob).map_err(PipelineError::io(params.display().to_string()))?;
    write_json(&meta_path, &meta)?;
    Ok((params, meta_path))
}

/// Restores a model into a freshly built `encoder` with the same descriptor.
pub fn load_model<E: Encoder>(
    dir: &Path,
    task: TaskKind,
    mut encoder: E,
    stage: &'static str,
) -> Result<TrainedModel<E>> {
    let (params_path, meta_path) = model_paths(dir, &encoder.descriptor().encoder_id, task);
    let meta: ModelMeta = read_json(&meta_path, stage)?;
    if &meta.encoder != encoder.descriptor() || meta.task != task {
        return Err(PipelineError::Artifact {
            path: meta_path,
            reason: format!("stored model {} does not match the configured encoder", meta.model_id),
        });
    }
    let values =
        parse_f64_blob(&params_path, &read_required(&params_path, stage)?, meta.head_params + meta.encoder_params)?;
    let (head_values, enc_values) = values.split_at(meta.head_params);
    let head = HeadParams::from_values(meta.head_shape, head_values.to_vec())
        .ok_or_else(|| PipelineError::Artifact { path: params_path.clone(), reason: "head shape mismatch".into() })?;
    encoder.load_parameters(enc_values)?;
    Ok(TrainedModel { encoder, task, head, hyperparams: meta.hyperparams, history: meta.history })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionMeta {
    pub model_id: String,
    pub config: FusionConfig,
    pub task: TaskKind,
    pub text_dim: usize,
    pub speech_dim: usize,
    pub head_shape: HeadShape,
    pub history: TrainingHistory,
    pub head_params: usize,
}

pub fn fusion_paths(dir: &Path, task: TaskKind) -> (PathBuf, PathBuf) {
    (dir.join(format!("fusion__{task}.params.bin")), dir.join(format!("fusion__{task}.meta.json")))
}

pub fn save_fusion(dir: &Path, model: &FusionModel) -> Result<(PathBuf, PathBuf)> {
    let (params, meta_path) = fusion_paths(dir, model.task);
    let meta = FusionMeta {
        model_id: model.model_id(),
        config: model.config.clone(),
        task: model.task,
        text_dim: model.text_dim,
        speech_dim: model.speech_dim,
        head_shape: model.head.shape(),
        history: model.history.clone(),
        head_params: model.head.param_count(),
    };
    write_atomic(&params, &f64_blob(&[model.head.values()]))
        .map_err(PipelineError::io(params.display().to_string()))?;
    write_json(&meta_path, &meta)?;
    Ok((params, meta_path))
}

pub fn load_fusion(dir: &Path, task: TaskKind, stage: &'static str) -> Result<FusionModel> {
    let (params_path, meta_path) = fusion_paths(dir, task);
    let meta: FusionMeta = read_json(&meta_path, stage)?;
    let values = parse_f64_blob(&params_path, &read_required(&params_path, stage)?, meta.head_params)?;
    let head = HeadParams::from_values(meta.head_shape, values)
        .ok_or_else(|| PipelineError::Artifact { path: params_path, reason: "head shape mismatch".into() })?;
    Ok(FusionModel {
        config: meta.config,
        task: meta.task,
        text_dim: meta.text_dim,
        speech_dim: meta.speech_dim,
        head,
        history: meta.history,
    })
}
