//! Bilingual risk-feature extraction through a pluggable LLM client.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use riskfusion_core::mock::{mock_extract, MarkerLexicon};
use riskfusion_core::prompt::{output_language_name, transcript_section, PromptError, PromptTemplate};
use riskfusion_core::{Language, TaskKind, Transcript};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{encode_component, TextCache};
use crate::provider::{run_bounded, CommandClient, ProviderError, RetryPolicy};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no extraction provider registered as `{0}`")]
    UnknownProvider(String),
    #[error("template {}: {reason}", path.display())]
    Template { path: PathBuf, reason: String },
    #[error("transcript for {subject_id}/{task} is empty")]
    EmptyTranscript { subject_id: String, task: TaskKind },
    #[error("extraction provider `{provider}` failed on {subject_id}/{task}/{language}: {source}")]
    Provider { provider: String, subject_id: String, task: TaskKind, language: Language, source: ProviderError },
    #[error("extraction provider `{provider}` returned nothing for {subject_id}/{task}/{language}")]
    EmptyResponse { provider: String, subject_id: String, task: TaskKind, language: Language },
    #[error("feature cache {}: {source}", path.display())]
    Cache { path: PathBuf, source: io::Error },
    #[error("all {0} extractions failed")]
    AllFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFeatureText {
    pub subject_id: String,
    pub task: TaskKind,
    pub language: Language,
    pub text: String,
    pub provider_id: String,
    pub prompt_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub output_language: Language,
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError>;
}

/// Keeps the marker-bearing sentences of the transcript embedded in the prompt.
#[derive(Debug)]
pub struct MockLlmProvider {
    id: String,
    lexicon: MarkerLexicon,
    calls: AtomicUsize,
}

impl MockLlmProvider {
    pub fn new(id: impl Into<String>, lexicon: MarkerLexicon) -> Self {
        Self { id: id.into(), lexicon, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for MockLlmProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = transcript_section(&request.prompt).unwrap_or(&request.prompt);
        mock_extract(text, &self.lexicon, request.output_language).map_err(|e| ProviderError::Fatal(e.to_string()))
    }
}

/// Sends the prompt on stdin of an external program; model settings and
/// credentials travel as environment variables.
#[derive(Debug)]
pub struct CommandLlmProvider {
    id: String,
    client: CommandClient,
}

impl CommandLlmProvider {
    pub fn new(id: impl Into<String>, client: CommandClient) -> Self {
        Self { id: id.into(), client }
    }
}

impl LlmProvider for CommandLlmProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let mut client = self.client.clone();
        client.env.insert("RISKFUSION_MODEL".into(), request.model.clone());
        client.env.insert("RISKFUSION_TEMPERATURE".into(), request.temperature.to_string());
        client.env.insert("RISKFUSION_OUTPUT_LANGUAGE".into(), request.output_language.as_str().into());
        client.call(None, &request.prompt)
    }
}

/// Prompt templates: `<dir>/<version>/<TASK>_<lang>.txt` when present,
/// otherwise the built-in wording.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    dir: Option<PathBuf>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self { dir: None }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn file_path(dir: &Path, task: TaskKind, language: Language, version: &str) -> PathBuf {
        dir.join(encode_component(version)).join(format!("{task}_{language}.txt"))
    }

    pub fn get(&self, task: TaskKind, language: Language, version: &str) -> Result<PromptTemplate, ExtractError> {
        if task == TaskKind::PR {
            return Err(PromptError::PassageReading.into());
        }
        if let Some(dir) = &self.dir {
            let path = Self::file_path(dir, task, language, version);
            match std::fs::read_to_string(&path) {
                Ok(body) => {
                    return PromptTemplate::new(task, language, version, body)
                        .map_err(|e| ExtractError::Template { path, reason: e.to_string() })
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(ExtractError::Template { path, reason: e.to_string() }),
            }
        }
        Ok(PromptTemplate::builtin(task, language, version)?)
    }
}

/// Text of a built-in template with the output language filled in, as
/// shipped in the templates directory.
pub fn shipped_template_text(task: TaskKind, language: Language, version: &str) -> Result<String, PromptError> {
    let t = PromptTemplate::builtin(task, language, version)?;
    Ok(t.body().replace(riskfusion_core::prompt::LANGUAGE_PLACEHOLDER, output_language_name(language)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractFailure {
    pub subject_id: String,
    pub task: TaskKind,
    pub language: Language,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchFeatures {
    pub features: Vec<RiskFeatureText>,
    pub failures: Vec<ExtractFailure>,
}

pub struct ExtractionGateway {
    cache: TextCache,
    providers: BTreeMap<String, Arc<dyn LlmProvider>>,
    templates: TemplateSet,
    retry: RetryPolicy,
    model: String,
    temperature: f64,
}

impl ExtractionGateway {
    /// Entries go under `<cache_root>/features/`.
    pub fn new(cache_root: &Path, templates: TemplateSet) -> Self {
        Self {
            cache: TextCache::new(cache_root.join("features")),
            providers: BTreeMap::new(),
            templates,
            retry: RetryPolicy::default(),
            model: String::new(),
            temperature: 0.0,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_model(mut self, model: impl Into<String>, temperature: f64) -> Self {
        self.model = model.into();
        self.temperature = temperature;
        self
    }

    pub fn register(&mut self, provider: Arc<dyn LlmProvider>) {
        self.providers.insert(provider.id().to_string(), provider);
    }

    pub fn cache_path(
        &self,
        provider_id: &str,
        prompt_version: &str,
        subject_id: &str,
        task: TaskKind,
        language: Language,
    ) -> PathBuf {
        self.cache.path_for(
            &[provider_id, prompt_version],
            &format!("{}__{task}__{language}.txt", encode_component(subject_id)),
        )
    }

    fn provider(&self, provider_id: &str) -> Result<&Arc<dyn LlmProvider>, ExtractError> {
        self.providers.get(provider_id).ok_or_else(|| ExtractError::UnknownProvider(provider_id.to_string()))
    }

    /// One feature text per requested language, served from the cache when present.
    pub fn extract_features(
        &self,
        transcript: &Transcript,
        task: TaskKind,
        languages: &[Language],
        provider_id: &str,
        prompt_version: &str,
    ) -> Result<Vec<RiskFeatureText>, ExtractError> {
        languages.iter().map(|&l| self.extract_one(transcript, task, l, provider_id, prompt_version)).collect()
    }

    fn extract_one(
        &self,
        transcript: &Transcript,
        task: TaskKind,
        language: Language,
        provider_id: &str,
        prompt_version: &str,
    ) -> Result<RiskFeatureText, ExtractError> {
        let provider = self.provider(provider_id)?;
        let template = self.templates.get(task, language, prompt_version)?;
        if transcript.text.trim().is_empty() {
            return Err(ExtractError::EmptyTranscript { subject_id: transcript.subject_id.clone(), task });
        }
        let path = self.cache_path(provider_id, prompt_version, &transcript.subject_id, task, language);
        let cached = self.cache.get(&path).map_err(|source| ExtractError::Cache { path: path.clone(), source })?;
        let text = match cached {
            Some(t) => t,
            None => {
                let request = LlmRequest {
                    prompt: template.render(transcript)?,
                    model: self.model.clone(),
                    temperature: self.temperature,
                    output_language: language,
                };
                let text =
                    self.retry.run(ProviderError::is_retryable, || provider.complete(&request)).map_err(|source| {
                        ExtractError::Provider {
                            provider: provider_id.to_string(),
                            subject_id: transcript.subject_id.clone(),
                            task,
                            language,
                            source,
                        }
                    })?;
                if text.trim().is_empty() {
                    return Err(ExtractError::EmptyResponse {
                        provider: provider_id.to_string(),
                        subject_id: transcript.subject_id.clone(),
                        task,
                        language,
                    });
                }
                self.cache.put(&path, &text).map_err(|source| ExtractError::Cache { path, source })?;
                text
            }
        };
        Ok(RiskFeatureText {
            subject_id: transcript.subject_id.clone(),
            task,
            language,
            text,
            provider_id: provider_id.to_string(),
            prompt_version: prompt_version.to_string(),
        })
    }

    /// Extracts every (ER/ED transcript, language) pair with at most `limit`
    /// requests in flight. PR transcripts are skipped.
    pub fn batch_extract(
        &self,
        transcripts: &[Transcript],
        languages: &[Language],
        provider_id: &str,
        prompt_version: &str,
        limit: usize,
    ) -> Result<BatchFeatures, ExtractError> {
        self.provider(provider_id)?;
        let items: Vec<(&Transcript, Language)> = transcripts
            .iter()
            .filter(|t| t.task.has_text_content())
            .flat_map(|t| languages.iter().map(move |&l| (t, l)))
            .collect();
        let results = run_bounded(&items, limit, |(t, l)| self.extract_one(t, t.task, *l, provider_id, prompt_version));
        let mut out = BatchFeatures::default();
        for ((t, l), r) in items.iter().zip(results) {
            match r {
                Ok(f) => out.features.push(f),
                Err(e) => {
                    log::warn!("{e}");
                    out.failures.push(ExtractFailure {
                        subject_id: t.subject_id.clone(),
                        task: t.task,
                        language: *l,
                        reason: e.to_string(),
                    });
                }
            }
        }
        if out.features.is_empty() && !out.failures.is_empty() {
            return Err(ExtractError::AllFailed(out.failures.len()));
        }
        Ok(out)
    }
}
