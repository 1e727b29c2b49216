//! Speech-to-text gateway: pluggable providers behind a per-entry file cache.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use riskfusion_core::{DatasetManifest, Language, RecordingRef, TaskKind, Transcript};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{encode_component, TextCache};
use crate::manifest::resolve;
use crate::provider::{run_bounded, CommandClient, ProviderError, RetryPolicy};

#[derive(Debug, Error)]
pub enum AsrError {
    #[error("no ASR provider registered as `{0}`")]
    UnknownProvider(String),
    #[error("transcript file {} not found", .0.display())]
    MissingTranscriptFile(PathBuf),
    #[error("ASR provider `{provider}` failed on {subject_id}/{task}: {source}")]
    Provider { provider: String, subject_id: String, task: TaskKind, source: ProviderError },
    #[error("ASR provider `{provider}` returned an empty transcript for {subject_id}/{task}")]
    EmptyOutput { provider: String, subject_id: String, task: TaskKind },
    #[error("ASR cache {}: {source}", path.display())]
    Cache { path: PathBuf, source: io::Error },
    #[error("all {0} transcriptions failed")]
    AllFailed(usize),
}

impl AsrError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AsrError::Provider { source, .. } if source.is_retryable())
    }
}

pub trait AsrProvider: Send + Sync {
    fn id(&self) -> &str;
    fn transcribe(&self, rec: &RecordingRef, audio_path: &Path) -> Result<String, AsrError>;
}

/// Reads precomputed transcripts stored next to the audio with a `.txt` extension.
#[derive(Debug, Default)]
pub struct FileProvider;

impl FileProvider {
    pub fn transcript_path(audio_path: &Path) -> PathBuf {
        audio_path.with_extension("txt")
    }
}

impl AsrProvider for FileProvider {
    fn id(&self) -> &str {
        "file"
    }

    fn transcribe(&self, _rec: &RecordingRef, audio_path: &Path) -> Result<String, AsrError> {
        let p = Self::transcript_path(audio_path);
        std::fs::read_to_string(&p).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => AsrError::MissingTranscriptFile(p),
            _ => AsrError::Cache { path: p, source: e },
        })
    }
}

/// Returns fixed text for every recording and records how it was called.
#[derive(Debug, Default)]
pub struct MockAsrProvider {
    id: String,
    text: String,
    failing: BTreeSet<String>,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
}

impl MockAsrProvider {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into(), ..Self::default() }
    }

    /// Subjects whose recordings always fail with a fatal error.
    pub fn failing_on(mut self, subjects: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.failing = subjects.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }
}

impl AsrProvider for MockAsrProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn transcribe(&self, rec: &RecordingRef, _audio_path: &Path) -> Result<String, AsrError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if self.failing.contains(&rec.subject_id) {
            return Err(AsrError::Provider {
                provider: self.id.clone(),
                subject_id: rec.subject_id.clone(),
                task: rec.task,
                source: ProviderError::Fatal("configured failure".into()),
            });
        }
        Ok(self.text.clone())
    }
}

/// Delegates to an external program: it receives the audio path as its last
/// argument and prints the transcript.
#[derive(Debug)]
pub struct CommandAsrProvider {
    id: String,
    client: CommandClient,
}

impl CommandAsrProvider {
    pub fn new(id: impl Into<String>, client: CommandClient) -> Self {
        Self { id: id.into(), client }
    }
}

impl AsrProvider for CommandAsrProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn transcribe(&self, rec: &RecordingRef, audio_path: &Path) -> Result<String, AsrError> {
        self.client.call(Some(&audio_path.to_string_lossy()), "").map_err(|source| AsrError::Provider {
            provider: self.id.clone(),
            subject_id: rec.subject_id.clone(),
            task: rec.task,
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsrFailure {
    pub subject_id: String,
    pub task: TaskKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchTranscripts {
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<AsrFailure>,
}

pub struct AsrGateway {
    cache: TextCache,
    base_dir: PathBuf,
    providers: BTreeMap<String, Arc<dyn AsrProvider>>,
    retry: RetryPolicy,
}

impl AsrGateway {
    /// `cache_root` is the shared cache root; entries go under `asr/`.
    /// Relative audio URIs resolve against `base_dir`.
    pub fn new(cache_root: &Path, base_dir: impl Into<PathBuf>) -> Self {
        Self {
            cache: TextCache::new(cache_root.join("asr")),
            base_dir: base_dir.into(),
            providers: BTreeMap::new(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn register(&mut self, provider: Arc<dyn AsrProvider>) {
        self.providers.insert(provider.id().to_string(), provider);
    }

    pub fn cache_path(&self, provider_id: &str, subject_id: &str, task: TaskKind) -> PathBuf {
        self.cache.path_for(&[provider_id], &format!("{}__{}.txt", encode_component(subject_id), task))
    }

    pub fn invalidate(&self, provider_id: &str, subject_id: &str, task: TaskKind) -> Result<(), AsrError> {
        let path = self.cache_path(provider_id, subject_id, task);
        self.cache.invalidate(&path).map_err(|source| AsrError::Cache { path, source })
    }

    pub fn transcribe(&self, rec: &RecordingRef, provider_id: &str) -> Result<Transcript, AsrError> {
        let provider =
            self.providers.get(provider_id).ok_or_else(|| AsrError::UnknownProvider(provider_id.to_string()))?;
        let path = self.cache_path(provider_id, &rec.subject_id, rec.task);
        let cached = self.cache.get(&path).map_err(|source| AsrError::Cache { path: path.clone(), source })?;
        let text = match cached {
            Some(t) => t,
            None => {
                let audio = resolve(&self.base_dir, &rec.audio_uri);
                let text = self.retry.run(AsrError::is_retryable, || provider.transcribe(rec, &audio))?;
                if rec.task.has_text_content() && text.trim().is_empty() {
                    return Err(AsrError::EmptyOutput {
                        provider: provider_id.to_string(),
                        subject_id: rec.subject_id.clone(),
                        task: rec.task,
                    });
                }
                self.cache.put(&path, &text).map_err(|source| AsrError::Cache { path, source })?;
                text
            }
        };
        Ok(Transcript {
            subject_id: rec.subject_id.clone(),
            task: rec.task,
            language: Language::Zh,
            text,
            provider_id: provider_id.to_string(),
        })
    }

    /// Transcribes every recording in manifest order with at most `limit`
    /// provider calls in flight. Individual failures are collected.
    pub fn batch_transcribe(
        &self,
        manifest: &DatasetManifest,
        provider_id: &str,
        limit: usize,
    ) -> Result<BatchTranscripts, AsrError> {
        if !self.providers.contains_key(provider_id) {
            return Err(AsrError::UnknownProvider(provider_id.to_string()));
        }
        let results = run_bounded(&manifest.recordings, limit, |rec| self.transcribe(rec, provider_id));
        let mut out = BatchTranscripts::default();
        for (rec, r) in manifest.recordings.iter().zip(results) {
            match r {
                Ok(t) => out.transcripts.push(t),
                Err(e) => {
                    log::warn!("{e}");
                    out.failures.push(AsrFailure {
                        subject_id: rec.subject_id.clone(),
                        task: rec.task,
                        reason: e.to_string(),
                    })
                }
            }
        }
        if out.transcripts.is_empty() && !out.failures.is_empty() {
            return Err(AsrError::AllFailed(out.failures.len()));
        }
        Ok(out)
    }
}
