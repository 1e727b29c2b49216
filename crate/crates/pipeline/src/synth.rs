//! Synthetic corpus generator for desk-scale runs.
//!
//! Each ER/ED transcript is a sequence of sentences; every sentence carries
//! one lexicon marker with a class-dependent probability and is neutral
//! filler otherwise. Audio is replaced by surrogate frame tokens in which
//! the low token ids play the role of markers.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use riskfusion_core::mock::MarkerLexicon;
use riskfusion_core::rng::{stream, Stream};
use riskfusion_core::{DatasetManifest, RecordingRef, RiskLabel, Sex, SubjectRecord, TaskKind};
use serde::{Deserialize, Serialize};

use crate::cache::write_atomic;
use crate::error::{PipelineError, Result};
use crate::manifest::write_manifest;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const FRAME_RATE_HZ: f64 = riskfusion_core::encoder::DEFAULT_FRAME_RATE_HZ as f64;

/// Sentence frames with exactly one marker slot.
pub const MARKER_SENTENCES: [&str; 3] = ["我经常{m}。", "最近总是觉得{m}。", "一想到这些我就{m}。"];

/// Neutral sentences containing no marker.
pub const FILLER_SENTENCES: [&str; 8] = [
    "今天天气很好。",
    "我喜欢和朋友一起打球。",
    "放学以后我会去图书馆。",
    "周末我们去公园散步。",
    "妈妈做的饭很好吃。",
    "我在学校学习数学和语文。",
    "图片里的人在看着前面。",
    "她的眼睛很大。",
];

/// The passage every subject reads aloud.
pub const PR_PASSAGE: &str = "春天来了，花园里的花都开了。小鸟在树上唱歌，孩子们在草地上玩耍。";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerForms {
    pub zh: String,
    pub en: String,
}

fn default_markers() -> Vec<MarkerForms> {
    [
        ("哭", "cry"),
        ("难过", "sad"),
        ("绝望", "hopeless"),
        ("孤独", "lonely"),
        ("失眠", "sleepless"),
        ("累", "exhausted"),
        ("害怕", "afraid"),
        ("没有方向", "directionless"),
    ]
    .into_iter()
    .map(|(zh, en)| MarkerForms { zh: zh.into(), en: en.into() })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub at_risk_fraction: f64,
    pub markers: Vec<MarkerForms>,
    pub p_marker_at_risk: f64,
    pub p_marker_non_risk: f64,
    pub sentences_per_transcript: usize,
    pub seed: u64,
    /// Surrogate audio: token vocabulary, frame count range, and how many
    /// of the lowest token ids act as acoustic markers.
    pub vocab: u32,
    pub min_frames: usize,
    pub max_frames: usize,
    pub marker_tokens: u32,
    pub p_token_at_risk: f64,
    pub p_token_non_risk: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_subjects: 120,
            at_risk_fraction: 0.5,
            markers: default_markers(),
            p_marker_at_risk: 0.9,
            p_marker_non_risk: 0.1,
            sentences_per_transcript: 10,
            seed: 0,
            vocab: 32,
            min_frames: 300,
            max_frames: 500,
            marker_tokens: 4,
            p_token_at_risk: 0.35,
            p_token_non_risk: 0.15,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), String> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.n_subjects == 0 || self.sentences_per_transcript == 0 {
            return Err("synthetic n_subjects and sentences_per_transcript must be positive".into());
        }
        if !(prob(self.p_marker_non_risk)
            && prob(self.p_marker_at_risk)
            && self.p_marker_non_risk < self.p_marker_at_risk)
        {
            return Err("synthetic marker probabilities must satisfy 0 <= p_non_risk < p_at_risk <= 1".into());
        }
        if !(prob(self.p_token_non_risk) && prob(self.p_token_at_risk)) {
            return Err("synthetic token probabilities must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.at_risk_fraction) {
            return Err("synthetic at_risk_fraction must lie in [0, 1]".into());
        }
        if self.markers.is_empty() {
            return Err("synthetic marker list is empty".into());
        }
        if self.marker_tokens == 0 || self.marker_tokens >= self.vocab {
            return Err("synthetic marker_tokens must be in 1..vocab".into());
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err("synthetic frame range is empty".into());
        }
        Ok(())
    }

    pub fn lexicon(&self) -> MarkerLexicon {
        MarkerLexicon::with_english(self.markers.iter().map(|m| (m.zh.clone(), m.en.clone())))
    }

    pub fn n_at_risk(&self) -> usize {
        (self.n_subjects as f64 * self.at_risk_fraction).round() as usize
    }
}

/// Everything generated for one subject and task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub recording: RecordingRef,
    pub transcript: String,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub manifest: DatasetManifest,
    pub recordings: Vec<SyntheticRecording>,
    pub lexicon: MarkerLexicon,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate().map_err(PipelineError::Config)?;
    let mut rng = stream(spec.seed, Stream::Synthetic);
    let n_at = spec.n_at_risk();
    let mut labels: Vec<RiskLabel> =
        (0..spec.n_subjects).map(|i| if i < n_at { RiskLabel::AtRisk } else { RiskLabel::NonRisk }).collect();
    labels.shuffle(&mut rng);
    let width = spec.n_subjects.to_string().len().max(3);
    let mut manifest = DatasetManifest::default();
    let mut recordings = Vec::new();
    for (i, label) in labels.into_iter().enumerate() {
        let subject_id = format!("S{:0width$}", i + 1);
        manifest.subjects.push(SubjectRecord {
            subject_id: subject_id.clone(),
            age: Some(rng.random_range(10..=18)),
            sex: Some(if rng.random_bool(0.5) { Sex::F } else { Sex::M }),
            label,
            split: None,
        });
        let at_risk = label == RiskLabel::AtRisk;
        for task in TaskKind::ALL {
            let transcript =
                if task.has_text_content() { transcript_text(spec, at_risk, &mut rng) } else { PR_PASSAGE.into() };
            let tokens = frame_tokens(spec, at_risk, &mut rng);
            let recording = RecordingRef {
                subject_id: subject_id.clone(),
                task,
                audio_uri: format!("audio/{subject_id}_{task}.tok"),
                duration_s: Some(tokens.len() as f64 / FRAME_RATE_HZ),
            };
            manifest.recordings.push(recording.clone());
            recordings.push(SyntheticRecording { recording, transcript, tokens });
        }
    }
    Ok(SyntheticCorpus { manifest, recordings, lexicon: spec.lexicon() })
}

fn transcript_text(spec: &SyntheticSpec, at_risk: bool, rng: &mut impl Rng) -> String {
    let p = if at_risk { spec.p_marker_at_risk } else { spec.p_marker_non_risk };
    let mut text = String::new();
    for _ in 0..spec.sentences_per_transcript {
        if rng.random_bool(p) {
            let frame = MARKER_SENTENCES[rng.random_range(0..MARKER_SENTENCES.len())];
            let marker = &spec.markers[rng.random_range(0..spec.markers.len())].zh;
            text.push_str(&frame.replace("{m}", marker));
        } else {
            text.push_str(FILLER_SENTENCES[rng.random_range(0..FILLER_SENTENCES.len())]);
        }
    }
    text
}

fn frame_tokens(spec: &SyntheticSpec, at_risk: bool, rng: &mut impl Rng) -> Vec<u32> {
    let p = if at_risk { spec.p_token_at_risk } else { spec.p_token_non_risk };
    let n = rng.random_range(spec.min_frames..=spec.max_frames);
    (0..n)
        .map(|_| {
            if rng.random_bool(p) {
                rng.random_range(0..spec.marker_tokens)
            } else {
                rng.random_range(spec.marker_tokens..spec.vocab)
            }
        })
        .collect()
}

/// Writes `manifest.jsonl`, `lexicon.json` and per-recording `audio/*.tok`
/// surrogates with sibling `.txt` transcripts under `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    for r in &corpus.recordings {
        let audio = dir.join(&r.recording.audio_uri);
        let tokens = r.tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" ") + "\n";
        write_atomic(&audio, tokens.as_bytes()).map_err(PipelineError::io(audio.display().to_string()))?;
        let txt = audio.with_extension("txt");
        write_atomic(&txt, r.transcript.as_bytes()).map_err(PipelineError::io(txt.display().to_string()))?;
    }
    let lex = dir.join(LEXICON_FILE);
    let json = serde_json::to_string_pretty(&corpus.lexicon).expect("lexicon serializes") + "\n";
    write_atomic(&lex, json.as_bytes()).map_err(PipelineError::io(lex.display().to_string()))?;
    let manifest = dir.join(MANIFEST_FILE);
    write_manifest(&manifest, &corpus.manifest).map_err(PipelineError::io(manifest.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use riskfusion_core::mock::count_occurrences;

    fn markers_in(text: &str, spec: &SyntheticSpec) -> usize {
        spec.markers.iter().map(|m| count_occurrences(text, &m.zh)).sum()
    }

    #[test]
    fn templates_carry_the_intended_marker_counts() {
        let spec = SyntheticSpec::default();
        for m in &spec.markers {
            for f in MARKER_SENTENCES {
                assert_eq!(markers_in(&f.replace("{m}", &m.zh), &spec), 1, "{f} / {}", m.zh);
            }
        }
        for f in FILLER_SENTENCES.iter().chain([&PR_PASSAGE]) {
            assert_eq!(markers_in(f, &spec), 0, "{f}");
        }
    }

    #[test]
    fn balanced_labels_and_all_tasks() {
        let c = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let at = c.manifest.subjects.iter().filter(|s| s.label == RiskLabel::AtRisk).count();
        assert_eq!((at, c.manifest.subjects.len() - at), (60, 60));
        assert_eq!(c.manifest.recordings.len(), 360);
        assert!(c.recordings.iter().filter(|r| r.recording.task == TaskKind::PR).all(|r| r.transcript == PR_PASSAGE));
        assert!(c.manifest.validate().violations.is_empty());
    }

    #[test]
    fn marker_counts_follow_the_binomial_mean() {
        let spec = SyntheticSpec { n_subjects: 400, ..SyntheticSpec::default() };
        let c = generate_synthetic(&spec).unwrap();
        let labels: std::collections::BTreeMap<_, _> =
            c.manifest.subjects.iter().map(|s| (s.subject_id.clone(), s.label)).collect();
        for (label, p) in [(RiskLabel::AtRisk, spec.p_marker_at_risk), (RiskLabel::NonRisk, spec.p_marker_non_risk)] {
            let counts: Vec<f64> = c
                .recordings
                .iter()
                .filter(|r| r.recording.task.has_text_content() && labels[&r.recording.subject_id] == label)
                .map(|r| markers_in(&r.transcript, &spec) as f64)
                .collect();
            let n = spec.sentences_per_transcript as f64;
            let mean = counts.iter().sum::<f64>() / counts.len() as f64;
            let sigma = (n * p * (1.0 - p) / counts.len() as f64).sqrt();
            assert!((mean - n * p).abs() <= 3.0 * sigma, "{label:?}: mean {mean}, expected {}", n * p);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec { n_subjects: 12, ..SyntheticSpec::default() };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_corpus(&generate_synthetic(&spec).unwrap(), a.path()).unwrap();
        write_corpus(&generate_synthetic(&spec).unwrap(), b.path()).unwrap();
        for f in [MANIFEST_FILE, LEXICON_FILE, "audio/S001_ER.tok", "audio/S012_ED.txt"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let other = generate_synthetic(&SyntheticSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(
            other.recordings,
            generate_synthetic(&SyntheticSpec { n_subjects: 12, ..SyntheticSpec::default() }).unwrap().recordings
        );
    }

    #[test]
    fn invalid_probabilities_are_rejected() {
        let spec = SyntheticSpec { p_marker_at_risk: 0.1, p_marker_non_risk: 0.2, ..SyntheticSpec::default() };
        assert!(generate_synthetic(&spec).is_err());
    }
}
