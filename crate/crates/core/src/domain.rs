//! Dataset domain types and manifest validation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the three recorded speech tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    /// Emotional regulation: open-ended question about handling distress.
    ER,
    /// Passage reading: every subject reads the same fixed passage.
    PR,
    /// Expression description: describing a face showing negative emotion.
    ED,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ER, TaskKind::PR, TaskKind::ED];
    /// Tasks with subject-specific text content.
    pub const TEXT: [TaskKind; 2] = [TaskKind::ER, TaskKind::ED];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ER => "ER",
            TaskKind::PR => "PR",
            TaskKind::ED => "ED",
        }
    }

    /// Whether the task's transcript carries subject-specific content.
    pub fn has_text_content(self) -> bool {
        self != TaskKind::PR
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownVariant(pub String);

impl fmt::Display for UnknownVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown value {:?}", self.0)
    }
}

impl FromStr for TaskKind {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ER" => Ok(TaskKind::ER),
            "PR" => Ok(TaskKind::PR),
            "ED" => Ok(TaskKind::ED),
            other => Err(UnknownVariant(other.into())),
        }
    }
}

/// Binary risk label. `AtRisk` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskLabel {
    NonRisk = 0,
    AtRisk = 1,
}

impl RiskLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(RiskLabel::NonRisk),
            1 => Some(RiskLabel::AtRisk),
            _ => None,
        }
    }
}

impl Serialize for RiskLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*self as u8)
    }
}

impl<'de> Deserialize<'de> for RiskLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        RiskLabel::from_index(v as usize)
            .ok_or_else(|| serde::de::Error::custom(alloc::format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(UnknownVariant(other.into())),
        }
    }
}

/// Text language tag for transcripts and extracted features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            other => Err(UnknownVariant(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectRecord {
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<Sex>,
    pub label: RiskLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingRef {
    pub subject_id: String,
    pub task: TaskKind,
    pub audio_uri: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transcript {
    pub subject_id: String,
    pub task: TaskKind,
    pub language: Language,
    pub text: String,
    pub provider_id: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subjects: Vec<SubjectRecord>,
    pub recordings: Vec<RecordingRef>,
    pub transcripts: Vec<Transcript>,
}

pub const MIN_AGE: u32 = 10;
pub const MAX_AGE: u32 = 18;

/// A single broken manifest invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateSubject { subject_id: String },
    AgeOutOfRange { subject_id: String, age: u32 },
    EmptySubjectId,
    DuplicateRecording { subject_id: String, task: TaskKind },
    DanglingRecording { subject_id: String, task: TaskKind },
    InvalidDuration { subject_id: String, task: TaskKind, duration_s: f64 },
    DuplicateTranscript { subject_id: String, task: TaskKind },
    DanglingTranscript { subject_id: String, task: TaskKind },
    EmptyTranscript { subject_id: String, task: TaskKind },
    TranscriptLanguage { subject_id: String, task: TaskKind, language: Language },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSubject { subject_id } => {
                write!(f, "duplicate subject {subject_id}")
            }
            Violation::AgeOutOfRange { subject_id, age } => {
                write!(f, "subject {subject_id}: age {age} outside [{MIN_AGE}, {MAX_AGE}]")
            }
            Violation::EmptySubjectId => f.write_str("empty subject_id"),
            Violation::DuplicateRecording { subject_id, task } => {
                write!(f, "duplicate recording for {subject_id}/{task}")
            }
            Violation::DanglingRecording { subject_id, task } => {
                write!(f, "recording {subject_id}/{task} references unknown subject {subject_id}")
            }
            Violation::InvalidDuration { subject_id, task, duration_s } => {
                write!(f, "recording {subject_id}/{task}: invalid duration {duration_s}")
            }
            Violation::DuplicateTranscript { subject_id, task } => {
                write!(f, "duplicate transcript for {subject_id}/{task}")
            }
            Violation::DanglingTranscript { subject_id, task } => {
                write!(f, "transcript {subject_id}/{task} references unknown subject {subject_id}")
            }
            Violation::EmptyTranscript { subject_id, task } => {
                write!(f, "transcript {subject_id}/{task} is empty")
            }
            Violation::TranscriptLanguage { subject_id, task, language } => {
                write!(f, "transcript {subject_id}/{task} has language {language}, expected zh")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl DatasetManifest {
    /// Checks every manifest invariant. Violations are reported, never fixed.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut subjects = BTreeSet::new();
        for s in &self.subjects {
            if s.subject_id.is_empty() {
                violations.push(Violation::EmptySubjectId);
            }
            if !subjects.insert(s.subject_id.as_str()) {
                violations.push(Violation::DuplicateSubject { subject_id: s.subject_id.clone() });
            }
            if let Some(age) = s.age {
                if !(MIN_AGE..=MAX_AGE).contains(&age) {
                    violations.push(Violation::AgeOutOfRange { subject_id: s.subject_id.clone(), age });
                }
            }
        }

        let mut seen = BTreeSet::new();
        for r in &self.recordings {
            let key = (r.subject_id.as_str(), r.task);
            if !subjects.contains(key.0) {
                violations.push(Violation::DanglingRecording { subject_id: r.subject_id.clone(), task: r.task });
            }
            if !seen.insert(key) {
                violations.push(Violation::DuplicateRecording { subject_id: r.subject_id.clone(), task: r.task });
            }
            if let Some(d) = r.duration_s {
                if !(d.is_finite() && d >= 0.0) {
                    violations.push(Violation::InvalidDuration {
                        subject_id: r.subject_id.clone(),
                        task: r.task,
                        duration_s: d,
                    });
                }
            }
        }

        let mut seen = BTreeSet::new();
        for t in &self.transcripts {
            let key = (t.subject_id.as_str(), t.task);
            if !subjects.contains(key.0) {
                violations.push(Violation::DanglingTranscript { subject_id: t.subject_id.clone(), task: t.task });
            }
            if !seen.insert(key) {
                violations.push(Violation::DuplicateTranscript { subject_id: t.subject_id.clone(), task: t.task });
            }
            if t.language != Language::Zh {
                violations.push(Violation::TranscriptLanguage {
                    subject_id: t.subject_id.clone(),
                    task: t.task,
                    language: t.language,
                });
            }
            // PR text is ignored downstream, so an empty PR transcript is fine.
            if t.task.has_text_content() && t.text.trim().is_empty() {
                violations.push(Violation::EmptyTranscript { subject_id: t.subject_id.clone(), task: t.task });
            }
        }
        ValidationReport { violations }
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == subject_id)
    }

    pub fn recording(&self, subject_id: &str, task: TaskKind) -> Option<&RecordingRef> {
        self.recordings.iter().find(|r| r.subject_id == subject_id && r.task == task)
    }

    pub fn transcript(&self, subject_id: &str, task: TaskKind) -> Option<&Transcript> {
        self.transcripts.iter().find(|t| t.subject_id == subject_id && t.task == task)
    }

    /// Subjects assigned to `split`, in manifest order.
    pub fn subjects_in(&self, split: Split) -> impl Iterator<Item = &SubjectRecord> {
        self.subjects.iter().filter(move |s| s.split == Some(split))
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for s in &self.subjects {
            if let Some(split) = s.split {
                counts[split as usize] += 1;
            }
        }
        counts
    }
}
