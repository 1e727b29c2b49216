//! Risk-feature extraction prompts.
//!
//! One template per (task, output language, version). Only ER and ED have
//! templates: PR transcripts are the same fixed passage for every subject.

use alloc::format;
use alloc::string::String;

use thiserror::Error;

use crate::domain::{Language, TaskKind, Transcript};

pub const TRANSCRIPT_PLACEHOLDER: &str = "{transcript}";
pub const LANGUAGE_PLACEHOLDER: &str = "{output_language}";
/// Line that introduces the transcript in the built-in templates.
pub const TRANSCRIPT_HEADER: &str = "\nText:\n";

pub const FIRST_PERSON_VERSION: &str = "first-person-v1";
pub const SUMMARY_VERSION: &str = "summary-v1";
pub const DEFAULT_VERSION: &str = FIRST_PERSON_VERSION;

const ER_CONTEXT: &str = "a response to the question 'Have you ever experienced moments of \
extreme emotional distress? How do you manage such feelings?' This is an interview with an \
adolescent focusing on emotional regulation (ER).";

const ED_CONTEXT: &str = "a description of an emotional face image. The interviewee (an \
adolescent) was asked to describe a face displaying negative emotions (ED).";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no prompt exists for task PR")]
    PassageReading,
    #[error("template body must contain exactly one {TRANSCRIPT_PLACEHOLDER}, found {0}")]
    Placeholder(usize),
    #[error("template is for {template} but transcript is for {transcript}")]
    TaskMismatch { template: TaskKind, transcript: TaskKind },
    #[error("unknown prompt version {0:?}")]
    UnknownVersion(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    task: TaskKind,
    language: Language,
    version: String,
    body: String,
}

impl PromptTemplate {
    pub fn new(
        task: TaskKind,
        language: Language,
        version: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, PromptError> {
        if task == TaskKind::PR {
            return Err(PromptError::PassageReading);
        }
        let body = body.into();
        let n = body.matches(TRANSCRIPT_PLACEHOLDER).count();
        if n != 1 {
            return Err(PromptError::Placeholder(n));
        }
        Ok(Self { task, language, version: version.into(), body })
    }

    /// Built-in template for `version`.
    pub fn builtin(task: TaskKind, language: Language, version: &str) -> Result<Self, PromptError> {
        let context = match task {
            TaskKind::ER => ER_CONTEXT,
            TaskKind::ED => ED_CONTEXT,
            TaskKind::PR => return Err(PromptError::PassageReading),
        };
        let instruction = match version {
            FIRST_PERSON_VERSION => {
                "Please summarize the key points that might be related to the person's suicidal \
                 thoughts in {output_language}. Be concise and to the point. Write your answer in \
                 the first-person perspective as if the interviewee is narrating about themselves."
            }
            SUMMARY_VERSION => {
                "Please summarize the key points of the text that might be related to suicidal \
                 thoughts in {output_language}. Be concise and to the point. Write a neutral \
                 summary describing the interviewee in the third person."
            }
            other => return Err(PromptError::UnknownVersion(other.into())),
        };
        let body = format!(
            "Your task is to recognize the following Chinese text, which contains {context} \
             {instruction}\n{TRANSCRIPT_HEADER}{TRANSCRIPT_PLACEHOLDER}"
        );
        Self::new(task, language, version, body)
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn render(&self, transcript: &Transcript) -> Result<String, PromptError> {
        if transcript.task != self.task {
            return Err(PromptError::TaskMismatch { template: self.task, transcript: transcript.task });
        }
        Ok(self
            .body
            .replace(LANGUAGE_PLACEHOLDER, output_language_name(self.language))
            .replace(TRANSCRIPT_PLACEHOLDER, &transcript.text))
    }
}

/// Renders `template` for `transcript`.
pub fn render_prompt(template: &PromptTemplate, transcript: &Transcript) -> Result<String, PromptError> {
    template.render(transcript)
}

pub fn output_language_name(language: Language) -> &'static str {
    match language {
        Language::Zh => "Chinese",
        Language::En => "English",
    }
}

/// The transcript part of a prompt rendered from a built-in template.
pub fn transcript_section(prompt: &str) -> Option<&str> {
    prompt.rfind(TRANSCRIPT_HEADER).map(|i| &prompt[i + TRANSCRIPT_HEADER.len()..])
}
