//! Combining per-task logits into one prediction per subject.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RiskLabel, TaskKind, UnknownVariant};
use crate::train::{argmax, Logits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingPolicy {
    /// Each task votes with its argmax; the majority of three votes wins.
    #[default]
    MajorityArgmax,
    /// Softmax probabilities are summed across tasks; the larger sum wins.
    ProbSum,
}

impl VotingPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            VotingPolicy::MajorityArgmax => "majority_argmax",
            VotingPolicy::ProbSum => "prob_sum",
        }
    }
}

impl fmt::Display for VotingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VotingPolicy {
    type Err = UnknownVariant;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority_argmax" => Ok(VotingPolicy::MajorityArgmax),
            "prob_sum" => Ok(VotingPolicy::ProbSum),
            other => Err(UnknownVariant(other.into())),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoteError {
    #[error("non-finite logits {0:?}")]
    NonFinite([f64; 2]),
    #[error("subject {0} has no task logits")]
    Empty(String),
    #[error("subject {subject_id} has two logits for {task}")]
    DuplicateTask { subject_id: String, task: TaskKind },
    #[error("logits for {got} filed under subject {expected}")]
    WrongSubject { expected: String, got: String },
    #[error("subject {0} appears more than once")]
    DuplicateSubject(String),
}

pub fn softmax(values: [f64; 2]) -> Result<[f64; 2], VoteError> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(VoteError::NonFinite(values));
    }
    Ok(crate::head::softmax2(values))
}

/// Up to one [`Logits`] per task for a single subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLogitsSet {
    subject_id: String,
    logits: BTreeMap<TaskKind, Logits>,
}

impl TaskLogitsSet {
    pub fn new(subject_id: impl Into<String>, logits: impl IntoIterator<Item = Logits>) -> Result<Self, VoteError> {
        let subject_id = subject_id.into();
        let mut map = BTreeMap::new();
        for l in logits {
            if l.subject_id != subject_id {
                return Err(VoteError::WrongSubject { expected: subject_id, got: l.subject_id });
            }
            let task = l.task;
            if map.insert(task, l).is_some() {
                return Err(VoteError::DuplicateTask { subject_id, task });
            }
        }
        if map.is_empty() {
            return Err(VoteError::Empty(subject_id));
        }
        Ok(Self { subject_id, logits: map })
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn logits(&self) -> impl Iterator<Item = &Logits> {
        self.logits.values()
    }

    pub fn get(&self, task: TaskKind) -> Option<&Logits> {
        self.logits.get(&task)
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPrediction {
    pub subject_id: String,
    pub label: RiskLabel,
    pub per_task_votes: BTreeMap<TaskKind, RiskLabel>,
    pub at_risk_score: f64,
    pub policy: VotingPolicy,
}

pub fn aggregate(set: &TaskLogitsSet, policy: VotingPolicy) -> Result<FinalPrediction, VoteError> {
    let mut votes = BTreeMap::new();
    let mut prob_sum = [0.0f64; 2];
    for l in set.logits() {
        let p = softmax(l.values)?;
        prob_sum[0] += p[0];
        prob_sum[1] += p[1];
        votes.insert(l.task, argmax(l.values));
    }
    let n = votes.len();
    let label = if policy == VotingPolicy::MajorityArgmax && n == TaskKind::ALL.len() {
        let at_risk = votes.values().filter(|&&v| v == RiskLabel::AtRisk).count();
        if 2 * at_risk > n {
            RiskLabel::AtRisk
        } else {
            RiskLabel::NonRisk
        }
    } else {
        // Also the fallback when fewer than three tasks are present.
        argmax(prob_sum)
    };
    Ok(FinalPrediction {
        subject_id: set.subject_id.clone(),
        label,
        per_task_votes: votes,
        at_risk_score: prob_sum[1] / n as f64,
        policy,
    })
}

pub fn aggregate_dataset(sets: &[TaskLogitsSet], policy: VotingPolicy) -> Result<Vec<FinalPrediction>, VoteError> {
    let mut seen = BTreeSet::new();
    for s in sets {
        if !seen.insert(s.subject_id()) {
            return Err(VoteError::DuplicateSubject(s.subject_id.clone()));
        }
    }
    sets.iter().map(|s| aggregate(s, policy)).collect()
}
