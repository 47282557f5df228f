//! Scoring of predicted patch commits against ground truth, candidate-count
//! statistics and report rendering.

mod report;
mod stats;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use report::{emit_report, ReportFormat, Reportable};
pub use stats::{candidate_stats, CandidateStats};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyRecords,
    #[error("{0}: ground truth is empty")]
    EmptyTruth(String),
    #[error("{0}: top-k scoring needs ranked predictions")]
    Unranked(String),
    #[error("no counts given")]
    EmptyCounts,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Line { path: PathBuf, line: usize, message: String },
    #[error("unknown report format {0:?} (expected json, markdown or csv)")]
    Format(String),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub cve_id: String,
    pub predicted: Vec<String>,
    pub truth: Vec<String>,
    /// Whether `predicted` is ordered best-first.
    #[serde(default = "default_true")]
    pub ranked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CveScore {
    pub cve_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_cve: Vec<CveScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy_count: usize,
    pub accuracy_pct: f64,
    pub k: Option<usize>,
}

fn dedup_ordered(items: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    items.iter().map(String::as_str).filter(|h| seen.insert(*h)).collect()
}

fn score_one(r: &EvalRecord, k: Option<usize>) -> Result<CveScore, EvalError> {
    if r.truth.is_empty() {
        return Err(EvalError::EmptyTruth(r.cve_id.clone()));
    }
    if k.is_some() && !r.ranked {
        return Err(EvalError::Unranked(r.cve_id.clone()));
    }
    let predicted = match k {
        Some(k) => &r.predicted[..k.min(r.predicted.len())],
        None => &r.predicted[..],
    };
    let p = dedup_ordered(predicted);
    let t: HashSet<&str> = r.truth.iter().map(String::as_str).collect();
    let inter = p.iter().filter(|h| t.contains(*h)).count();
    let precision = if p.is_empty() { 0.0 } else { inter as f64 / p.len() as f64 };
    let recall = inter as f64 / t.len() as f64;
    // harmonic mean of P and R, as one division so it rounds once
    let f1 = if inter == 0 {
        0.0
    } else {
        (2 * inter) as f64 / (p.len() + t.len()) as f64
    };
    Ok(CveScore {
        cve_id: r.cve_id.clone(),
        precision,
        recall,
        f1,
        hit: inter > 0,
    })
}

/// Per-CVE precision, recall and F1, macro-averaged over CVEs. With `k` set
/// only the first `k` predictions of each record count.
pub fn score(records: &[EvalRecord], k: Option<usize>) -> Result<EvalReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let per_cve: Vec<CveScore> = crate::par::map_ordered(records, true, |r| score_one(r, k))
        .into_iter()
        .collect::<Result<_, _>>()?;
    let n = per_cve.len() as f64;
    let mean = |f: fn(&CveScore) -> f64| per_cve.iter().map(f).sum::<f64>() / n;
    let accuracy_count = per_cve.iter().filter(|s| s.hit).count();
    Ok(EvalReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        accuracy_count,
        accuracy_pct: 100.0 * accuracy_count as f64 / n,
        k,
        per_cve,
    })
}

/// Read NDJSON `{cve_id, predicted, truth}` lines. Blank lines are skipped;
/// the first malformed line aborts with its line number.
pub fn load_predictions(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |message: String| EvalError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: EvalRecord = serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        if rec.truth.is_empty() {
            return Err(line_err("truth must not be empty".into()));
        }
        out.push(rec);
    }
    Ok(out)
}
