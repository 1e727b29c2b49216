//! Stage orchestration: each stage reads its upstream artifacts, writes its
//! outputs under `<output_root>/<experiment_id>/<stage>/`, and leaves a stage
//! record plus a run-log entry behind.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use riskfusion_core::fusion::{fuse, fusion_predict, train_fusion, FusionInput, FusionModel};
use riskfusion_core::metrics::{confusion, render_report, ConfusionCounts, MetricsResult, ReportEntry};
use riskfusion_core::mock::MarkerLexicon;
use riskfusion_core::split::split_dataset;
use riskfusion_core::vote::{aggregate, TaskLogitsSet};
use riskfusion_core::{
    ClassifierHeadConfig, DatasetManifest, Encoder, EncoderInput, FinalPrediction, Hyperparams, Logits, Representation,
    RiskLabel, Split, TaskKind, TrainedModel, Transcript,
};
use serde::{Deserialize, Serialize};

use crate::asr::{AsrGateway, AsrProvider, CommandAsrProvider, FileProvider, MockAsrProvider};
use crate::cache::write_atomic;
use crate::config::{stage_seed, ExperimentConfig, FeatureLanguage};
use crate::encoders::{read_audio, AnyEncoder};
use crate::error::{PipelineError, Result};
use crate::extract::{
    CommandLlmProvider, ExtractionGateway, LlmProvider, MockLlmProvider, RiskFeatureText, TemplateSet,
};
use crate::manifest::{parse_manifest, parse_manifest_str, resolve, write_manifest};
use crate::predictions;
use crate::provenance::{now_ms, Experiment, RunRecord, RunStatus, StageRecord};
use crate::provider::{CommandClient, RetryPolicy};
use crate::store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Transcribe,
    Extract,
    TrainText,
    TrainSpeech,
    ExportRepr,
    TrainFusion,
    Predict,
    Evaluate,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 10] = [
        Stage::Ingest,
        Stage::Transcribe,
        Stage::Extract,
        Stage::TrainText,
        Stage::TrainSpeech,
        Stage::ExportRepr,
        Stage::TrainFusion,
        Stage::Predict,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Transcribe => "transcribe",
            Stage::Extract => "extract",
            Stage::TrainText => "train_text",
            Stage::TrainSpeech => "train_speech",
            Stage::ExportRepr => "export_repr",
            Stage::TrainFusion => "train_fusion",
            Stage::Predict => "predict",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::PIPELINE.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: RunStatus,
    pub outputs: Vec<PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const FAILURES_FILE: &str = "failures.jsonl";
const TEXT_TASKS: [TaskKind; 2] = TaskKind::TEXT;

/// Per-split evaluation written by the `evaluate` stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub method: String,
    pub per_task: BTreeMap<TaskKind, MetricsResult>,
    pub combined: MetricsResult,
}

pub struct Runner {
    cfg: ExperimentConfig,
    exp: Experiment,
    force: bool,
    retry: RetryPolicy,
    asr_providers: Vec<Arc<dyn AsrProvider>>,
    llm_providers: Vec<Arc<dyn LlmProvider>>,
}

type Text = BTreeMap<(String, TaskKind), String>;

type InputFn<'a> = Box<dyn Fn(&str) -> Option<EncoderInput> + 'a>;

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let exp = Experiment::open(cfg.experiment_dir(), cfg.hash())?;
        Ok(Self {
            cfg,
            exp,
            force: false,
            retry: RetryPolicy::default(),
            asr_providers: Vec::new(),
            llm_providers: Vec::new(),
        })
    }

    pub fn force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Registers an extra ASR provider, taking precedence over configured ones with the same id.
    pub fn with_asr_provider(mut self, p: Arc<dyn AsrProvider>) -> Self {
        self.asr_providers.push(p);
        self
    }

    pub fn with_llm_provider(mut self, p: Arc<dyn LlmProvider>) -> Self {
        self.llm_providers.push(p);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn experiment_dir(&self) -> &Path {
        &self.exp.dir
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.exp.stage_dir(stage.as_str())
    }

    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::PIPELINE.into_iter().map(|s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        let inputs = self.required_inputs(stage)?;
        for (path, producer) in &inputs {
            if !path.exists() {
                return Err(PipelineError::MissingArtifact { path: path.clone(), stage: producer });
            }
        }
        let paths: Vec<PathBuf> = inputs.into_iter().map(|(p, _)| p).collect();
        let input_hashes = self.exp.hash_paths(&paths)?;
        let started = now_ms();
        if !self.force && self.exp.is_current(stage.as_str(), &input_hashes)? {
            log::info!("{stage}: inputs unchanged, skipped");
            let rec = self.exp.stage_record(stage.as_str())?.expect("current stage has a record");
            self.exp.append_run(&RunRecord {
                stage: stage.as_str().into(),
                status: RunStatus::Skipped,
                config_hash: self.exp.config_hash.clone(),
                inputs: input_hashes,
                outputs: rec.outputs.clone(),
                started_at_unix_ms: started,
                duration_ms: now_ms() - started,
            })?;
            let outputs = rec.outputs.keys().map(|k| self.exp.dir.join(k)).collect();
            return Ok(StageOutcome { stage, status: RunStatus::Skipped, outputs });
        }
        let dir = self.stage_dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(PipelineError::io(format!("clearing {}", dir.display())))?;
        }
        fs::create_dir_all(&dir).map_err(PipelineError::io(format!("creating {}", dir.display())))?;
        log::info!("{stage}: running");
        let outputs = match stage {
            Stage::Ingest => self.ingest(&dir)?,
            Stage::Transcribe => self.transcribe(&dir)?,
            Stage::Extract => self.extract(&dir)?,
            Stage::TrainText => self.train_text(&dir)?,
            Stage::TrainSpeech => self.train_speech(&dir)?,
            Stage::ExportRepr => self.export_repr(&dir)?,
            Stage::TrainFusion => self.train_fusion(&dir)?,
            Stage::Predict => self.predict(&dir)?,
            Stage::Evaluate => self.evaluate(&dir)?,
            Stage::Report => self.report(&dir)?,
        };
        let output_hashes = self.exp.hash_paths(&outputs)?;
        self.exp.write_stage_record(&StageRecord {
            stage: stage.as_str().into(),
            config_hash: self.exp.config_hash.clone(),
            inputs: input_hashes.clone(),
            outputs: output_hashes.clone(),
        })?;
        self.exp.append_run(&RunRecord {
            stage: stage.as_str().into(),
            status: RunStatus::Completed,
            config_hash: self.exp.config_hash.clone(),
            inputs: input_hashes,
            outputs: output_hashes,
            started_at_unix_ms: started,
            duration_ms: now_ms() - started,
        })?;
        Ok(StageOutcome { stage, status: RunStatus::Completed, outputs })
    }

    // ---- artifact locations -------------------------------------------

    fn manifest_file(&self) -> PathBuf {
        self.stage_dir(Stage::Ingest).join(MANIFEST_FILE)
    }

    fn transcripts_file(&self) -> PathBuf {
        self.stage_dir(Stage::Transcribe).join(TRANSCRIPTS_FILE)
    }

    fn features_file(&self) -> PathBuf {
        self.stage_dir(Stage::Extract).join(FEATURES_FILE)
    }

    fn lexicon_path(&self) -> Option<PathBuf> {
        self.cfg.extraction.lexicon.as_ref().map(|p| self.cfg.resolve(p))
    }

    fn text_source(&self) -> (PathBuf, &'static str) {
        match self.cfg.text_model.feature_language {
            FeatureLanguage::Transcript => (self.transcripts_file(), "transcribe"),
            _ => (self.features_file(), "extract"),
        }
    }

    fn text_id(&self) -> &str {
        self.cfg.text_model.encoder.id()
    }

    fn speech_id(&self) -> &str {
        self.cfg.speech_model.encoder.id()
    }

    fn model_files(&self, stage: Stage, encoder_id: &str, tasks: &[TaskKind]) -> Vec<(PathBuf, &'static str)> {
        let dir = self.stage_dir(stage);
        tasks
            .iter()
            .flat_map(|&t| {
                let (a, b) = store::model_paths(&dir, encoder_id, t);
                [(b, stage.as_str()), (a, stage.as_str())]
            })
            .collect()
    }

    fn repr_files(&self, splits: &[Split]) -> Vec<(PathBuf, &'static str)> {
        let dir = self.stage_dir(Stage::ExportRepr);
        let mut out = Vec::new();
        for id in [self.text_id(), self.speech_id()] {
            for &t in &TEXT_TASKS {
                for &s in splits {
                    let (a, b) = store::repr_paths(&dir, id, t, s);
                    out.push((a, "export_repr"));
                    out.push((b, "export_repr"));
                }
            }
        }
        out
    }

    fn fusion_files(&self) -> Vec<(PathBuf, &'static str)> {
        let dir = self.stage_dir(Stage::TrainFusion);
        TEXT_TASKS
            .iter()
            .flat_map(|&t| {
                let (a, b) = store::fusion_paths(&dir, t);
                [(b, "train_fusion"), (a, "train_fusion")]
            })
            .collect()
    }

    fn predictions_file(&self, split: Split) -> PathBuf {
        self.stage_dir(Stage::Predict).join(format!("predictions__{split}.csv"))
    }

    fn logits_file(&self, split: Split) -> PathBuf {
        self.stage_dir(Stage::Predict).join(format!("logits__{split}.jsonl"))
    }

    fn metrics_file(&self, split: Split) -> PathBuf {
        self.stage_dir(Stage::Evaluate).join(format!("metrics__{split}.json"))
    }

    pub fn report_files(&self, split: Split) -> (PathBuf, PathBuf) {
        let dir = self.stage_dir(Stage::Report);
        let stem = format!("{}__{split}", crate::cache::encode_component(&self.cfg.experiment_id));
        (dir.join(format!("{stem}.report.txt")), dir.join(format!("{stem}.report.csv")))
    }

    /// Files a stage reads, each paired with the step that produces it.
    fn required_inputs(&self, stage: Stage) -> Result<Vec<(PathBuf, &'static str)>> {
        let manifest = (self.manifest_file(), "ingest");
        let lexicon: Vec<(PathBuf, &'static str)> = self.lexicon_path().map(|p| (p, "synth")).into_iter().collect();
        let speech_tasks = TaskKind::ALL;
        let mut v = match stage {
            Stage::Ingest => vec![(self.cfg.manifest_path(), "synth")],
            Stage::Transcribe => vec![manifest],
            Stage::Extract => vec![manifest, (self.transcripts_file(), "transcribe")],
            Stage::TrainText => vec![manifest, self.text_source()],
            Stage::TrainSpeech => vec![manifest],
            Stage::ExportRepr => {
                let mut v = vec![manifest, self.text_source()];
                v.extend(self.model_files(Stage::TrainText, self.text_id(), &TEXT_TASKS));
                v.extend(self.model_files(Stage::TrainSpeech, self.speech_id(), &TEXT_TASKS));
                v
            }
            Stage::TrainFusion => {
                let mut v = vec![manifest];
                v.extend(self.repr_files(&[Split::Train, Split::Dev]));
                v
            }
            Stage::Predict => {
                let mut v = vec![manifest, self.text_source()];
                v.extend(self.fusion_files());
                v.extend(self.model_files(Stage::TrainSpeech, self.speech_id(), &speech_tasks));
                v.extend(self.model_files(Stage::TrainText, self.text_id(), &TEXT_TASKS));
                v.extend(self.repr_files(&self.cfg.report.splits));
                v
            }
            Stage::Evaluate => {
                let mut v = vec![manifest];
                v.extend(self.cfg.report.splits.iter().map(|&s| (self.predictions_file(s), "predict")));
                v
            }
            Stage::Report => self.cfg.report.splits.iter().map(|&s| (self.metrics_file(s), "evaluate")).collect(),
        };
        if matches!(stage, Stage::Extract | Stage::TrainText | Stage::ExportRepr | Stage::Predict) {
            v.extend(lexicon);
        }
        Ok(v)
    }

    // ---- shared loaders -------------------------------------------------

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self.manifest_file();
        let text = fs::read_to_string(&path).map_err(PipelineError::io(path.display().to_string()))?;
        Ok(parse_manifest_str(&text)?)
    }

    fn audio_base(&self) -> PathBuf {
        self.cfg.manifest_path().parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn lexicon(&self) -> Result<Option<MarkerLexicon>> {
        let Some(path) = self.lexicon_path() else { return Ok(None) };
        let text =
            fs::read_to_string(&path).map_err(PipelineError::io(format!("reading lexicon {}", path.display())))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PipelineError::Config(format!("lexicon {}: {e}", path.display())))
    }

    fn text_encoder(&self) -> Result<AnyEncoder> {
        Ok(self.cfg.text_model.encoder.build(self.lexicon()?.as_ref())?)
    }

    fn speech_encoder(&self) -> Result<AnyEncoder> {
        Ok(self.cfg.speech_model.encoder.build(None)?)
    }

    /// Text model input per (subject, task): an extracted feature text in
    /// the configured language, or the raw transcript.
    fn text_inputs(&self) -> Result<Text> {
        let (path, _) = self.text_source();
        let mut out = BTreeMap::new();
        match self.cfg.text_model.feature_language.language() {
            None => {
                for t in read_jsonl::<Transcript>(&path)? {
                    if t.task.has_text_content() {
                        out.insert((t.subject_id, t.task), t.text);
                    }
                }
            }
            Some(lang) => {
                for f in read_jsonl::<RiskFeatureText>(&path)? {
                    if f.language == lang && f.prompt_version == self.cfg.extraction.prompt_version {
                        out.insert((f.subject_id, f.task), f.text);
                    }
                }
            }
        }
        Ok(out)
    }

    fn audio_input(&self, manifest: &DatasetManifest, subject_id: &str, task: TaskKind) -> Option<EncoderInput> {
        let rec = manifest.recording(subject_id, task)?;
        match read_audio(&resolve(&self.audio_base(), &rec.audio_uri)) {
            Ok(x) => Some(x),
            Err(e) => {
                log::warn!("{subject_id}/{task}: {e}");
                None
            }
        }
    }

    fn task_hyper(&self, base: Hyperparams, stage: &str, task: TaskKind) -> Hyperparams {
        let seed = stage_seed(self.cfg.runtime.seed, &format!("{stage}/{task}"));
        base.with_seed(seed)
    }

    // ---- stages ---------------------------------------------------------

    fn ingest(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let raw = parse_manifest(&self.cfg.manifest_path())?;
        let m = split_dataset(&raw, self.cfg.dataset.split_ratios, self.cfg.split_seed())?;
        let [train, dev, test] = m.split_counts();
        log::info!("ingest: {} subjects, split {train}/{dev}/{test}", m.subjects.len());
        let out = dir.join(MANIFEST_FILE);
        write_manifest(&out, &m).map_err(PipelineError::io(out.display().to_string()))?;
        Ok(vec![out])
    }

    fn transcribe(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let asr = &self.cfg.asr;
        let mut gw = AsrGateway::new(&self.cfg.cache_root(), self.audio_base()).with_retry(self.retry);
        gw.register(Arc::new(FileProvider));
        if let Some(text) = &asr.mock_text {
            gw.register(Arc::new(MockAsrProvider::new("mock", text.clone())));
        }
        if let Some(client) = CommandClient::from_argv(&asr.command, asr.credentials.clone()) {
            gw.register(Arc::new(CommandAsrProvider::new(asr.provider.clone(), client)));
        }
        for p in &self.asr_providers {
            gw.register(p.clone());
        }
        // Transcripts supplied in the manifest are used as-is.
        let pending = DatasetManifest {
            subjects: m.subjects.clone(),
            recordings: m
                .recordings
                .iter()
                .filter(|r| m.transcript(&r.subject_id, r.task).is_none())
                .cloned()
                .collect(),
            transcripts: Vec::new(),
        };
        let batch = if pending.recordings.is_empty() {
            Default::default()
        } else {
            gw.batch_transcribe(&pending, &asr.provider, asr.concurrency)?
        };
        let mut fresh: BTreeMap<(String, TaskKind), Transcript> =
            batch.transcripts.into_iter().map(|t| ((t.subject_id.clone(), t.task), t)).collect();
        let mut all = Vec::new();
        for r in &m.recordings {
            if let Some(t) = m.transcript(&r.subject_id, r.task) {
                all.push(t.clone());
            } else if let Some(t) = fresh.remove(&(r.subject_id.clone(), r.task)) {
                all.push(t);
            }
        }
        // Text-only entries: a transcript with no recording behind it.
        all.extend(m.transcripts.iter().filter(|t| m.recording(&t.subject_id, t.task).is_none()).cloned());
        log::info!("transcribe: {} transcripts, {} failures", all.len(), batch.failures.len());
        let out = dir.join(TRANSCRIPTS_FILE);
        let failures = dir.join(FAILURES_FILE);
        write_jsonl(&out, &all)?;
        write_jsonl(&failures, &batch.failures)?;
        Ok(vec![out, failures])
    }

    fn extract(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let ex = &self.cfg.extraction;
        let transcripts: Vec<Transcript> = read_jsonl(&self.transcripts_file())?;
        let templates = match &ex.templates_dir {
            Some(d) => TemplateSet::from_dir(self.cfg.resolve(d)),
            None => TemplateSet::builtin(),
        };
        let mut gw = ExtractionGateway::new(&self.cfg.cache_root(), templates)
            .with_retry(self.retry)
            .with_model(ex.model.clone(), ex.temperature);
        if let Some(lex) = self.lexicon()? {
            gw.register(Arc::new(MockLlmProvider::new("mock", lex)));
        }
        if let Some(client) = CommandClient::from_argv(&ex.command, ex.credentials.clone()) {
            gw.register(Arc::new(CommandLlmProvider::new(ex.provider.clone(), client)));
        }
        for p in &self.llm_providers {
            gw.register(p.clone());
        }
        let batch = gw.batch_extract(&transcripts, &ex.languages, &ex.provider, &ex.prompt_version, ex.concurrency)?;
        log::info!("extract: {} feature texts, {} failures", batch.features.len(), batch.failures.len());
        let out = dir.join(FEATURES_FILE);
        let failures = dir.join(FAILURES_FILE);
        write_jsonl(&out, &batch.features)?;
        write_jsonl(&failures, &batch.failures)?;
        Ok(vec![out, failures])
    }

    fn train_text(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let text = self.text_inputs()?;
        let mut outputs = Vec::new();
        for task in TEXT_TASKS {
            let set = |split| {
                labelled(&m, split, |sid| text.get(&(sid.to_string(), task)).map(|t| EncoderInput::Text(t.clone())))
            };
            let encoder = self.text_encoder()?;
            let head = ClassifierHeadConfig { input_dim: encoder.descriptor().repr_dim };
            let hyper = self.task_hyper(self.cfg.text_hyperparams(), "train_text", task);
            let model = riskfusion_core::train::train_classifier(
                &set(Split::Train),
                &set(Split::Dev),
                encoder,
                task,
                head,
                &hyper,
            )?;
            log_history(&model.model_id(), &model.history);
            let (a, b) = store::save_model(dir, &model)?;
            outputs.extend([a, b]);
        }
        Ok(outputs)
    }

    fn train_speech(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let mut outputs = Vec::new();
        for task in TaskKind::ALL {
            let set = |split| labelled(&m, split, |sid| self.audio_input(&m, sid, task));
            let encoder = self.speech_encoder()?;
            let head = ClassifierHeadConfig { input_dim: encoder.descriptor().repr_dim };
            let hyper = self.task_hyper(self.cfg.speech_hyperparams(), "train_speech", task);
            let model = riskfusion_core::train::train_classifier(
                &set(Split::Train),
                &set(Split::Dev),
                encoder,
                task,
                head,
                &hyper,
            )?;
            log_history(&model.model_id(), &model.history);
            let (a, b) = store::save_model(dir, &model)?;
            outputs.extend([a, b]);
        }
        Ok(outputs)
    }

    fn load_text_model(&self, task: TaskKind) -> Result<TrainedModel<AnyEncoder>> {
        store::load_model(&self.stage_dir(Stage::TrainText), task, self.text_encoder()?, "train_text")
    }

    fn load_speech_model(&self, task: TaskKind) -> Result<TrainedModel<AnyEncoder>> {
        store::load_model(&self.stage_dir(Stage::TrainSpeech), task, self.speech_encoder()?, "train_speech")
    }

    /// Frozen representations from the fine-tuned encoders for ER and ED.
    fn export_repr(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let text = self.text_inputs()?;
        let mut outputs = Vec::new();
        let mut missing = Vec::new();
        for task in TEXT_TASKS {
            let text_model = self.load_text_model(task)?;
            let speech_model = self.load_speech_model(task)?;
            let jobs: [(&AnyEncoder, InputFn<'_>); 2] = [
                (
                    &text_model.encoder,
                    Box::new(|sid: &str| text.get(&(sid.to_string(), task)).map(|t| EncoderInput::Text(t.clone()))),
                ),
                (&speech_model.encoder, Box::new(|sid: &str| self.audio_input(&m, sid, task))),
            ];
            for (encoder, input_of) in &jobs {
                let id = encoder.descriptor().encoder_id.clone();
                for split in Split::ALL {
                    let mut reps = Vec::new();
                    for s in m.subjects_in(split) {
                        let encoded = input_of(&s.subject_id).map(|x| encoder.encode(&x));
                        match encoded {
                            Some(Ok(v)) => reps.push(Representation::new(s.subject_id.clone(), task, id.clone(), v)?),
                            Some(Err(e)) => missing.push(format!("{}\t{task}\t{id}\t{e}", s.subject_id)),
                            None => missing.push(format!("{}\t{task}\t{id}\tno input", s.subject_id)),
                        }
                    }
                    let (a, b) = store::write_representations(dir, &id, task, split, &reps)?;
                    outputs.extend([a, b]);
                }
            }
        }
        if !missing.is_empty() {
            log::warn!("export_repr: {} inputs missing", missing.len());
        }
        let missing_path = dir.join("missing.tsv");
        let body: String = missing.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&missing_path, body.as_bytes()).map_err(PipelineError::io(missing_path.display().to_string()))?;
        outputs.push(missing_path);
        Ok(outputs)
    }

    fn train_fusion(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let labels = labels(&m);
        let repr_paths: Vec<PathBuf> =
            self.repr_files(&[Split::Train, Split::Dev]).into_iter().map(|(p, _)| p).collect();
        let before = self.exp.hash_paths(&repr_paths)?;
        let text_desc = self.text_encoder()?.descriptor().clone();
        let speech_desc = self.speech_encoder()?.descriptor().clone();
        let mut outputs = Vec::new();
        for task in TEXT_TASKS {
            let fused = |split| -> Result<Vec<_>> {
                let pairs = self.fused_inputs(task, split)?;
                Ok(pairs
                    .into_iter()
                    .map(|x| {
                        let l = labels[&x.subject_id];
                        (x, l)
                    })
                    .collect())
            };
            let mut config = self.cfg.fusion_config();
            config.seed = stage_seed(self.cfg.runtime.seed, &format!("train_fusion/{task}"));
            let model =
                train_fusion(&fused(Split::Train)?, &fused(Split::Dev)?, &text_desc, &speech_desc, task, &config)?;
            log_history(&model.model_id(), &model.history);
            let (a, b) = store::save_fusion(dir, &model)?;
            outputs.extend([a, b]);
        }
        let after = self.exp.hash_paths(&repr_paths)?;
        if let Some(changed) = before.iter().find(|(k, v)| after.get(*k) != Some(*v)) {
            return Err(PipelineError::FrozenViolation(self.exp.dir.join(changed.0)));
        }
        Ok(outputs)
    }

    fn representations(&self, encoder_id: &str, task: TaskKind, split: Split) -> Result<Vec<Representation>> {
        store::read_representations(&self.stage_dir(Stage::ExportRepr), encoder_id, task, split, "export_repr")
    }

    /// Fused inputs for subjects that have both modalities, in text-file order.
    fn fused_inputs(&self, task: TaskKind, split: Split) -> Result<Vec<riskfusion_core::FusedInput>> {
        let speech: BTreeMap<String, Representation> = self
            .representations(self.speech_id(), task, split)?
            .into_iter()
            .map(|r| (r.subject_id.clone(), r))
            .collect();
        let mut out = Vec::new();
        for t in self.representations(self.text_id(), task, split)? {
            if let Some(s) = speech.get(&t.subject_id) {
                out.push(fuse(&t, s)?);
            }
        }
        Ok(out)
    }

    fn predict(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let text = self.text_inputs()?;
        let fusion: BTreeMap<TaskKind, FusionModel> = TEXT_TASKS
            .iter()
            .map(|&t| Ok((t, store::load_fusion(&self.stage_dir(Stage::TrainFusion), t, "train_fusion")?)))
            .collect::<Result<_>>()?;
        let speech: BTreeMap<TaskKind, TrainedModel<AnyEncoder>> =
            TaskKind::ALL.iter().map(|&t| Ok((t, self.load_speech_model(t)?))).collect::<Result<_>>()?;
        let text_models: BTreeMap<TaskKind, TrainedModel<AnyEncoder>> =
            TEXT_TASKS.iter().map(|&t| Ok((t, self.load_text_model(t)?))).collect::<Result<_>>()?;
        let mut outputs = Vec::new();
        for &split in &self.cfg.report.splits {
            let fused: BTreeMap<(String, TaskKind), riskfusion_core::FusedInput> = TEXT_TASKS
                .iter()
                .map(|&t| Ok(self.fused_inputs(t, split)?.into_iter().map(move |x| ((x.subject_id.clone(), t), x))))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            let mut all_logits = Vec::new();
            let mut finals = Vec::new();
            for s in m.subjects_in(split) {
                let sid = s.subject_id.as_str();
                let mut logits: Vec<Logits> = Vec::new();
                for task in TaskKind::ALL {
                    let l = if let Some(x) = fused.get(&(sid.to_string(), task)) {
                        Some(fusion_predict::<AnyEncoder>(fusion.get(&task), FusionInput::Fused(x), task)?)
                    } else if let Some(audio) = self.audio_input(&m, sid, task) {
                        let input = FusionInput::Unimodal { subject_id: sid, model: &speech[&task], input: &audio };
                        Some(fusion_predict(fusion.get(&task), input, task)?)
                    } else if let Some(t) = text.get(&(sid.to_string(), task)) {
                        let x = EncoderInput::Text(t.clone());
                        let input = FusionInput::Unimodal { subject_id: sid, model: &text_models[&task], input: &x };
                        Some(fusion_predict(fusion.get(&task), input, task)?)
                    } else {
                        None
                    };
                    match l {
                        Some(l) => logits.push(l),
                        None => log::warn!("predict: no input for {sid}/{task}"),
                    }
                }
                if logits.is_empty() {
                    log::warn!("predict: {sid} has no usable task; no prediction");
                    continue;
                }
                all_logits.extend(logits.iter().cloned());
                finals.push(aggregate(&TaskLogitsSet::new(sid, logits)?, self.cfg.decision.policy)?);
            }
            let lp = self.logits_file(split);
            write_jsonl(&lp, &all_logits)?;
            let pp = self.predictions_file(split);
            write_atomic(&pp, predictions::to_csv(&finals).as_bytes())
                .map_err(PipelineError::io(pp.display().to_string()))?;
            debug_assert_eq!(dir, pp.parent().expect("stage dir"));
            outputs.extend([lp, pp]);
        }
        Ok(outputs)
    }

    fn evaluate(&self, _dir: &Path) -> Result<Vec<PathBuf>> {
        let m = self.manifest()?;
        let labels = labels(&m);
        let mut outputs = Vec::new();
        for &split in &self.cfg.report.splits {
            let path = self.predictions_file(split);
            let text = fs::read_to_string(&path).map_err(PipelineError::io(path.display().to_string()))?;
            let preds = predictions::parse_csv(&text)
                .map_err(|reason| PipelineError::Artifact { path: path.clone(), reason })?;
            let eval = evaluate_predictions(&preds, &labels, split, self.cfg.method_name())?;
            if let Some(acc) = eval.combined.acc {
                log::info!("evaluate: {split} combined accuracy {acc:.4}");
            }
            let out = self.metrics_file(split);
            let json = serde_json::to_string_pretty(&eval).expect("evaluation serializes") + "\n";
            write_atomic(&out, json.as_bytes()).map_err(PipelineError::io(out.display().to_string()))?;
            outputs.push(out);
        }
        Ok(outputs)
    }

    fn report(&self, _dir: &Path) -> Result<Vec<PathBuf>> {
        let mut outputs = Vec::new();
        for &split in &self.cfg.report.splits {
            let eval = self.evaluation(split)?;
            let entry = ReportEntry {
                method: eval.method.clone(),
                per_task: eval.per_task.clone(),
                combined: Some(eval.combined),
            };
            let title = format!("{} ({split})", self.cfg.experiment_id);
            let table = render_report(&title, &TaskKind::ALL, &[entry], self.cfg.report.acc_format);
            let (txt, csv) = self.report_files(split);
            write_atomic(&txt, table.to_text().as_bytes()).map_err(PipelineError::io(txt.display().to_string()))?;
            write_atomic(&csv, table.to_csv().as_bytes()).map_err(PipelineError::io(csv.display().to_string()))?;
            outputs.extend([txt, csv]);
        }
        Ok(outputs)
    }

    pub fn evaluation(&self, split: Split) -> Result<Evaluation> {
        let path = self.metrics_file(split);
        let bytes = fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingArtifact { path: path.clone(), stage: "evaluate" },
            _ => PipelineError::Io { context: path.display().to_string(), source: e },
        })?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::Artifact { path, reason: e.to_string() })
    }

    pub fn predictions(&self, split: Split) -> Result<Vec<FinalPrediction>> {
        let path = self.predictions_file(split);
        let text = fs::read_to_string(&path).map_err(PipelineError::io(path.display().to_string()))?;
        predictions::parse_csv(&text).map_err(|reason| PipelineError::Artifact { path, reason })
    }

    pub fn predictions_path(&self, split: Split) -> PathBuf {
        self.predictions_file(split)
    }
}

/// Per-task and combined metrics for one split; per-task groups score each
/// task's vote on its own.
pub fn evaluate_predictions(
    preds: &[FinalPrediction],
    labels: &BTreeMap<String, RiskLabel>,
    split: Split,
    method: String,
) -> Result<Evaluation> {
    let combined = MetricsResult::from_counts(confusion(preds, labels)?);
    let mut per_task = BTreeMap::new();
    for task in TaskKind::ALL {
        let pairs: Vec<(RiskLabel, RiskLabel)> =
            preds.iter().filter_map(|p| Some((*p.per_task_votes.get(&task)?, labels[&p.subject_id]))).collect();
        if !pairs.is_empty() {
            per_task.insert(task, MetricsResult::from_counts(ConfusionCounts::from_pairs(pairs)));
        }
    }
    Ok(Evaluation { split, method, per_task, combined })
}

fn labels(m: &DatasetManifest) -> BTreeMap<String, RiskLabel> {
    m.subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect()
}

fn labelled(
    m: &DatasetManifest,
    split: Split,
    input_of: impl Fn(&str) -> Option<EncoderInput>,
) -> Vec<(EncoderInput, RiskLabel)> {
    m.subjects_in(split).filter_map(|s| Some((input_of(&s.subject_id)?, s.label))).collect()
}

fn log_history(model_id: &str, h: &riskfusion_core::TrainingHistory) {
    let last_loss = h.epoch_loss.last().copied().unwrap_or(f64::NAN);
    match h.dev_accuracy.last().copied().flatten() {
        Some(acc) => log::info!("{model_id}: final loss {last_loss:.4}, dev accuracy {acc:.4}"),
        None => log::info!("{model_id}: final loss {last_loss:.4}"),
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(PipelineError::io(path.display().to_string()))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path.display().to_string()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Artifact {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
