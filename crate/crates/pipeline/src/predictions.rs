//! Predictions file: header, then one row per subject with the final label,
//! the mean AtRisk probability and each task's vote.

use std::collections::BTreeMap;
use std::str::FromStr;

use riskfusion_core::{FinalPrediction, RiskLabel, TaskKind, VotingPolicy};

pub const HEADER: &str = "subject_id,label,at_risk_score,ER,PR,ED,policy";

pub fn to_csv(predictions: &[FinalPrediction]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for p in predictions {
        out.push_str(&format!("{},{},{:.6}", p.subject_id, p.label.index(), p.at_risk_score));
        for t in TaskKind::ALL {
            out.push(',');
            if let Some(v) = p.per_task_votes.get(&t) {
                out.push_str(&v.index().to_string());
            }
        }
        out.push(',');
        out.push_str(p.policy.as_str());
        out.push('\n');
    }
    out
}

/// Parses a predictions file. Scores come back rounded to six decimals.
pub fn parse_csv(text: &str) -> Result<Vec<FinalPrediction>, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => return Err(format!("expected header {HEADER:?}")),
    }
    let label = |s: &str, line: usize| -> Result<RiskLabel, String> {
        s.parse::<usize>().ok().and_then(RiskLabel::from_index).ok_or_else(|| format!("line {line}: bad label {s:?}"))
    };
    let mut out = Vec::new();
    for (i, l) in lines {
        let n = i + 1;
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 7 {
            return Err(format!("line {n}: expected 7 fields, found {}", f.len()));
        }
        let mut per_task_votes = BTreeMap::new();
        for (t, v) in TaskKind::ALL.into_iter().zip(&f[3..6]) {
            if !v.is_empty() {
                per_task_votes.insert(t, label(v, n)?);
            }
        }
        out.push(FinalPrediction {
            subject_id: f[0].to_string(),
            label: label(f[1], n)?,
            at_risk_score: f[2].parse().map_err(|_| format!("line {n}: bad score {:?}", f[2]))?,
            per_task_votes,
            policy: VotingPolicy::from_str(f[6]).map_err(|e| format!("line {n}: {e}"))?,
        });
    }
    Ok(out)
}
