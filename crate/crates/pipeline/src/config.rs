//! Experiment configuration (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use riskfusion_core::fusion::FusionConfig;
use riskfusion_core::metrics::AccFormat;
use riskfusion_core::prompt::DEFAULT_VERSION;
use riskfusion_core::{Hyperparams, Language, Split, VotingPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::EncoderSpec;
use crate::error::{PipelineError, Result};
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub asr: AsrConfig,
    #[serde(default)]
    pub extraction: ExtractionConfig,
    #[serde(default)]
    pub text_model: TextModelConfig,
    #[serde(default)]
    pub speech_model: SpeechModelConfig,
    #[serde(default)]
    pub fusion: FusionSection,
    #[serde(default)]
    pub decision: DecisionConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_ratios")]
    pub split_ratios: [u32; 3],
    /// Defaults to a seed derived from the runtime seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

fn default_ratios() -> [u32; 3] {
    [4, 1, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsrConfig {
    #[serde(default = "default_asr_provider")]
    pub provider: String,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// External program for command-backed providers.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// Fixed output of the `mock` provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_text: Option<String>,
    #[serde(default, skip_serializing)]
    pub credentials: BTreeMap<String, String>,
}

impl Default for AsrConfig {
    fn default() -> Self {
        Self {
            provider: default_asr_provider(),
            concurrency: default_concurrency(),
            command: Vec::new(),
            mock_text: None,
            credentials: BTreeMap::new(),
        }
    }
}

fn default_asr_provider() -> String {
    "file".into()
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractionConfig {
    #[serde(default = "default_extraction_provider")]
    pub provider: String,
    #[serde(default = "default_prompt_version")]
    pub prompt_version: String,
    #[serde(default = "default_languages")]
    pub languages: Vec<Language>,
    /// Marker lexicon (JSON) used by the mock provider and marker encoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(default, skip_serializing)]
    pub credentials: BTreeMap<String, String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            provider: default_extraction_provider(),
            prompt_version: default_prompt_version(),
            languages: default_languages(),
            lexicon: None,
            concurrency: default_concurrency(),
            templates_dir: None,
            model: String::new(),
            temperature: 0.0,
            command: Vec::new(),
            credentials: BTreeMap::new(),
        }
    }
}

fn default_extraction_provider() -> String {
    "mock".into()
}

fn default_prompt_version() -> String {
    DEFAULT_VERSION.into()
}

fn default_languages() -> Vec<Language> {
    vec![Language::Zh, Language::En]
}

/// What the text model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLanguage {
    #[default]
    Zh,
    En,
    /// The raw transcript, without extraction.
    Transcript,
}

impl FeatureLanguage {
    pub fn language(self) -> Option<Language> {
        match self {
            FeatureLanguage::Zh => Some(Language::Zh),
            FeatureLanguage::En => Some(Language::En),
            FeatureLanguage::Transcript => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextModelConfig {
    #[serde(default = "default_text_encoder")]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub feature_language: FeatureLanguage,
    #[serde(default = "text_lr")]
    pub learning_rate: f64,
    #[serde(default = "text_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl Default for TextModelConfig {
    fn default() -> Self {
        Self {
            encoder: default_text_encoder(),
            feature_language: FeatureLanguage::default(),
            learning_rate: text_lr(),
            batch_size: text_batch(),
            epochs: default_epochs(),
        }
    }
}

fn default_text_encoder() -> EncoderSpec {
    EncoderSpec::BagOfMarkers { id: "bag-of-markers".into(), dim: 16, trainable: true, max_context: None }
}

fn text_lr() -> f64 {
    Hyperparams::text_default().learning_rate
}

fn text_batch() -> usize {
    Hyperparams::text_default().batch_size
}

fn default_epochs() -> usize {
    riskfusion_core::train::DEFAULT_EPOCHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechModelConfig {
    #[serde(default = "default_speech_encoder")]
    pub encoder: EncoderSpec,
    #[serde(default = "speech_lr")]
    pub learning_rate: f64,
    #[serde(default = "speech_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl Default for SpeechModelConfig {
    fn default() -> Self {
        Self {
            encoder: default_speech_encoder(),
            learning_rate: speech_lr(),
            batch_size: speech_batch(),
            epochs: default_epochs(),
        }
    }
}

fn default_speech_encoder() -> EncoderSpec {
    EncoderSpec::BagOfAcousticTokens {
        id: "bag-of-acoustic-tokens".into(),
        vocab: 32,
        trainable: true,
        window_frames: None,
    }
}

fn speech_lr() -> f64 {
    Hyperparams::speech_default().learning_rate
}

fn speech_batch() -> usize {
    Hyperparams::speech_default().batch_size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    #[serde(default = "fusion_lr")]
    pub learning_rate: f64,
    #[serde(default = "fusion_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self { learning_rate: fusion_lr(), batch_size: fusion_batch(), epochs: default_epochs() }
    }
}

fn fusion_lr() -> f64 {
    FusionConfig::new("", "").learning_rate
}

fn fusion_batch() -> usize {
    FusionConfig::new("", "").batch_size
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionConfig {
    #[serde(default)]
    pub policy: VotingPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub acc_format: AccFormat,
    #[serde(default = "default_report_splits")]
    pub splits: Vec<Split>,
    /// Row label; defaults to a name built from the encoder ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { acc_format: AccFormat::default(), splits: default_report_splits(), method: None }
    }
}

fn default_report_splits() -> Vec<Split> {
    vec![Split::Dev, Split::Test]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cache_root")]
    pub cache_root: PathBuf,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self { seed: 0, cache_root: default_cache_root(), output_root: default_output_root() }
    }
}

fn default_cache_root() -> PathBuf {
    "cache".into()
}

fn default_output_root() -> PathBuf {
    "runs".into()
}

/// Derives an independent per-stage seed from the runtime seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(PipelineError::io(format!("reading config {}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base)
}

/// Parses, applies environment credential overrides, and validates.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
    cfg.base_dir = base_dir.to_path_buf();
    for creds in [&mut cfg.asr.credentials, &mut cfg.extraction.credentials] {
        for (key, value) in creds.iter_mut() {
            if let Ok(v) = std::env::var(key) {
                *value = v;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if self.experiment_id.trim().is_empty() {
            return fail("experiment_id must not be empty".into());
        }
        if self.dataset.split_ratios.contains(&0) {
            return fail(format!("split_ratios {:?} must all be positive", self.dataset.split_ratios));
        }
        if self.text_model.encoder.id() == self.speech_model.encoder.id() {
            return fail("text and speech encoders need distinct ids".into());
        }
        if self.asr.concurrency == 0 || self.extraction.concurrency == 0 {
            return fail("concurrency must be at least 1".into());
        }
        if self.extraction.languages.is_empty() {
            return fail("extraction.languages must not be empty".into());
        }
        if let Some(l) = self.text_model.feature_language.language() {
            if !self.extraction.languages.contains(&l) {
                return fail(format!("text_model.feature_language {l} is not among extraction.languages"));
            }
        }
        let hp = [
            ("text_model", self.text_model.learning_rate, self.text_model.batch_size, self.text_model.epochs),
            ("speech_model", self.speech_model.learning_rate, self.speech_model.batch_size, self.speech_model.epochs),
            ("fusion", self.fusion.learning_rate, self.fusion.batch_size, self.fusion.epochs),
        ];
        for (section, lr, bs, epochs) in hp {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{section}.learning_rate must be positive, got {lr}"));
            }
            if bs == 0 || epochs == 0 {
                return fail(format!("{section}.batch_size and epochs must be positive"));
            }
        }
        if !(0.0..=2.0).contains(&self.extraction.temperature) {
            return fail("extraction.temperature must be within [0, 2]".into());
        }
        if let Some(s) = &self.synthetic {
            s.validate().map_err(PipelineError::Config)?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.dataset.manifest)
    }

    pub fn cache_root(&self) -> PathBuf {
        self.resolve(&self.runtime.cache_root)
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.resolve(&self.runtime.output_root).join(crate::cache::encode_component(&self.experiment_id))
    }

    pub fn split_seed(&self) -> u64 {
        self.dataset.split_seed.unwrap_or_else(|| stage_seed(self.runtime.seed, "split"))
    }

    pub fn text_hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new(self.text_model.learning_rate, self.text_model.batch_size)
            .with_seed(stage_seed(self.runtime.seed, "train_text"));
        h.epochs = self.text_model.epochs;
        h
    }

    pub fn speech_hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::new(self.speech_model.learning_rate, self.speech_model.batch_size)
            .with_seed(stage_seed(self.runtime.seed, "train_speech"));
        h.epochs = self.speech_model.epochs;
        h
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let mut f = FusionConfig::new(self.text_model.encoder.id(), self.speech_model.encoder.id());
        f.learning_rate = self.fusion.learning_rate;
        f.batch_size = self.fusion.batch_size;
        f.epochs = self.fusion.epochs;
        f.seed = stage_seed(self.runtime.seed, "train_fusion");
        f
    }

    pub fn method_name(&self) -> String {
        self.report.method.clone().unwrap_or_else(|| {
            let text = match self.text_model.feature_language {
                FeatureLanguage::Transcript => self.text_model.encoder.id().to_string(),
                FeatureLanguage::Zh | FeatureLanguage::En => {
                    let l = self.text_model.feature_language.language().expect("feature language");
                    format!("{}-{}[{l}]", self.extraction.provider, self.text_model.encoder.id())
                }
            };
            format!("{text}+{}", self.speech_model.encoder.id())
        })
    }

    /// SHA-256 over the canonical JSON form. Credentials are excluded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
