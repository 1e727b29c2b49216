//! Deterministic stand-in for an LLM risk-feature extractor.
//!
//! The mock keeps every sentence that contains at least one marker from a
//! lexicon, in original order. English output swaps each marker for its
//! English surface form; the rest of the sentence is left as is.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Language;

pub const NO_RISK_CONTENT: &str = "no risk-related content";

const TERMINATORS: [char; 7] = ['.', '!', '?', '。', '！', '？', '\n'];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MockError {
    #[error("marker lexicon is empty")]
    EmptyLexicon,
    #[error("marker {0:?} has no English form")]
    MissingTranslation(String),
}

/// Marker strings plus their English forms.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerLexicon {
    pub markers: Vec<String>,
    #[serde(default)]
    pub english: BTreeMap<String, String>,
}

impl MarkerLexicon {
    pub fn new<I, S>(markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { markers: markers.into_iter().map(Into::into).collect(), english: BTreeMap::new() }
    }

    pub fn with_english<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut lex = Self::default();
        for (src, en) in pairs {
            let src = src.into();
            lex.english.insert(src.clone(), en.into());
            lex.markers.push(src);
        }
        lex
    }

    /// Surface forms per marker slot: the source form, then the English form if any.
    pub fn slots(&self) -> Vec<Vec<String>> {
        self.markers
            .iter()
            .map(|m| {
                let mut forms = alloc::vec![m.clone()];
                if let Some(en) = self.english.get(m) {
                    if en != m {
                        forms.push(en.clone());
                    }
                }
                forms
            })
            .collect()
    }
}

/// Splits `text` into trimmed sentences, each keeping its terminator.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if TERMINATORS.contains(&c) {
            let end = i + c.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

/// Non-overlapping occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        0
    } else {
        haystack.matches(needle).count()
    }
}

pub fn mock_extract(text: &str, lexicon: &MarkerLexicon, language: Language) -> Result<String, MockError> {
    if lexicon.markers.is_empty() {
        return Err(MockError::EmptyLexicon);
    }
    if language == Language::En {
        if let Some(m) = lexicon.markers.iter().find(|m| !lexicon.english.contains_key(*m)) {
            return Err(MockError::MissingTranslation(m.clone()));
        }
    }
    let mut kept: Vec<String> = Vec::new();
    for sentence in sentences(text) {
        if !lexicon.markers.iter().any(|m| !m.is_empty() && sentence.contains(m.as_str())) {
            continue;
        }
        let mut s = String::from(sentence);
        if language == Language::En {
            for m in &lexicon.markers {
                s = s.replace(m.as_str(), &lexicon.english[m]);
            }
        }
        kept.push(s);
    }
    if kept.is_empty() {
        Ok(NO_RISK_CONTENT.into())
    } else {
        Ok(kept.join(" "))
    }
}
