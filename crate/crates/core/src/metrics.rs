//! Confusion counts, Acc/F1, and result tables.
//!
//! AtRisk is the positive class. F1 is undefined (not zero) when there are no
//! positives in either predictions or labels, and renders as `-`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{RiskLabel, TaskKind};
use crate::vote::FinalPrediction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no label for subject {0}")]
    MissingLabel(String),
    #[error("subject {0} predicted more than once")]
    DuplicatePrediction(String),
    #[error("accuracy of an empty evaluation is undefined")]
    Empty,
    #[error("report csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: RiskLabel, actual: RiskLabel) {
        match (predicted, actual) {
            (RiskLabel::AtRisk, RiskLabel::AtRisk) => self.tp += 1,
            (RiskLabel::NonRisk, RiskLabel::NonRisk) => self.tn += 1,
            (RiskLabel::AtRisk, RiskLabel::NonRisk) => self.fp += 1,
            (RiskLabel::NonRisk, RiskLabel::AtRisk) => self.fn_ += 1,
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (RiskLabel, RiskLabel)>) -> Self {
        let mut c = Self::default();
        for (p, a) in pairs {
            c.record(p, a);
        }
        c
    }
}

pub fn confusion(
    predictions: &[FinalPrediction],
    labels: &BTreeMap<String, RiskLabel>,
) -> Result<ConfusionCounts, MetricsError> {
    let mut seen = BTreeSet::new();
    let mut c = ConfusionCounts::default();
    for p in predictions {
        if !seen.insert(p.subject_id.as_str()) {
            return Err(MetricsError::DuplicatePrediction(p.subject_id.clone()));
        }
        let actual = labels.get(&p.subject_id).ok_or_else(|| MetricsError::MissingLabel(p.subject_id.clone()))?;
        c.record(p.label, *actual);
    }
    Ok(c)
}

/// (TP + TN) / (TP + TN + FP + FN)
pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    match c.total() {
        0 => Err(MetricsError::Empty),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

/// 2·TP / (2·TP + FP + FN), `None` when the denominator is zero.
pub fn f1(c: &ConfusionCounts) -> Option<f64> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    (denom > 0).then(|| (2 * c.tp) as f64 / denom as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsResult {
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub n: u64,
    /// Absent for externally reported figures (e.g. published baselines).
    pub counts: Option<ConfusionCounts>,
}

impl MetricsResult {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        Self { acc: accuracy(&counts).ok(), f1: f1(&counts), n: counts.total(), counts: Some(counts) }
    }

    /// A result known only by its reported values.
    pub fn reported(acc: Option<f64>, f1: Option<f64>, n: u64) -> Self {
        Self { acc, f1, n, counts: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccFormat {
    /// Whole percent, e.g. `68`.
    #[default]
    Integer,
    /// Two-decimal percent, e.g. `61.48`.
    TwoDecimals,
}

/// One method's metrics: per task and combined across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub method: String,
    pub per_task: BTreeMap<TaskKind, MetricsResult>,
    pub combined: Option<MetricsResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub cells: Vec<String>,
}

/// One machine-readable line: a metric group (task or `combined`) of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub method: String,
    pub group: String,
    pub metrics: MetricsResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub records: Vec<ReportRecord>,
}

pub const COMBINED: &str = "combined";
pub const MISSING: &str = "-";
pub const CSV_HEADER: &str = "method,group,acc,f1,n,tp,tn,fp,fn";

fn percent(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(v) => format!("{:.*}", decimals, v * 100.0),
        None => MISSING.into(),
    }
}

pub fn format_acc(acc: Option<f64>, fmt: AccFormat) -> String {
    percent(acc, if fmt == AccFormat::Integer { 0 } else { 2 })
}

pub fn format_f1(f1: Option<f64>) -> String {
    percent(f1, 2)
}

/// Builds the table for `tasks` (column order as given) plus a `Combined` group.
pub fn render_report(title: &str, tasks: &[TaskKind], entries: &[ReportEntry], acc_format: AccFormat) -> ReportTable {
    let mut headers = alloc::vec![String::from("Method")];
    for t in tasks {
        headers.push(format!("{t} Acc"));
        headers.push(format!("{t} F1"));
    }
    headers.push("Combined Acc".into());
    headers.push("Combined F1".into());

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for e in entries {
        let mut cells = Vec::new();
        let groups = tasks
            .iter()
            .map(|t| (t.as_str(), e.per_task.get(t)))
            .chain(core::iter::once((COMBINED, e.combined.as_ref())));
        for (group, m) in groups {
            cells.push(format_acc(m.and_then(|m| m.acc), acc_format));
            cells.push(format_f1(m.and_then(|m| m.f1)));
            if let Some(m) = m {
                records.push(ReportRecord { method: e.method.clone(), group: group.into(), metrics: *m });
            }
        }
        rows.push(ReportRow { method: e.method.clone(), cells });
    }
    ReportTable { title: title.into(), headers, rows, records }
}

impl ReportTable {
    /// Fixed-width text table with `|` separators.
    pub fn to_text(&self) -> String {
        let ncols = self.headers.len();
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            widths[0] = widths[0].max(r.method.chars().count());
            for (i, c) in r.cells.iter().enumerate() {
                widths[i + 1] = widths[i + 1].max(c.chars().count());
            }
        }
        let line =
            |cols: &mut dyn Iterator<Item = &str>| -> String {
                let parts: Vec<String> =
                    cols.enumerate()
                        .map(|(i, c)| {
                            if i == 0 {
                                format!("{:<w$}", c, w = widths[0])
                            } else {
                                format!("{:>w$}", c, w = widths[i])
                            }
                        })
                        .collect();
                let mut s = parts.join(" | ");
                s.truncate(s.trim_end().len());
                s
            };
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        out.push_str(&line(&mut self.headers.iter().map(String::as_str)));
        out.push('\n');
        let rule: Vec<String> = (0..ncols).map(|i| "-".repeat(widths[i])).collect();
        out.push_str(&rule.join("-+-"));
        out.push('\n');
        for r in &self.rows {
            let mut cols = core::iter::once(r.method.as_str()).chain(r.cells.iter().map(String::as_str));
            out.push_str(&line(&mut cols));
            out.push('\n');
        }
        out
    }

    /// Long-format CSV twin: one line per (method, group).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let m = &r.metrics;
            let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
            let (tp, tn, fp, fn_) = match m.counts {
                Some(c) => (c.tp.to_string(), c.tn.to_string(), c.fp.to_string(), c.fn_.to_string()),
                None => Default::default(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                csv_field(&r.method),
                r.group,
                opt(m.acc),
                opt(m.f1),
                m.n,
                tp,
                tn,
                fp,
                fn_
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => fields.push(core::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

/// Parses the output of [`ReportTable::to_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRecord>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(MetricsError::Csv { line: 1, reason: "missing header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| MetricsError::Csv { line: i + 1, reason: reason.into() };
        let f = split_csv_line(line);
        if f.len() != 9 {
            return Err(err("expected 9 fields"));
        }
        let real = |s: &str| -> Result<Option<f64>, MetricsError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err("bad number"))
            }
        };
        let int = |s: &str| s.parse::<u64>().map_err(|_| err("bad count"));
        let counts = if f[5].is_empty() {
            None
        } else {
            Some(ConfusionCounts::new(int(&f[5])?, int(&f[6])?, int(&f[7])?, int(&f[8])?))
        };
        out.push(ReportRecord {
            method: f[0].clone(),
            group: f[1].clone(),
            metrics: MetricsResult { acc: real(&f[2])?, f1: real(&f[3])?, n: int(&f[4])?, counts },
        });
    }
    Ok(out)
}
