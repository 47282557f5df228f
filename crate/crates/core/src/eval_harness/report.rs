use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::{CandidateStats, EvalError, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(EvalError::Format(s.to_string())),
        }
    }
}

/// Anything [`emit_report`] can render.
pub enum Reportable<'a> {
    Eval(&'a EvalReport),
    Stats(&'a CandidateStats),
}

fn scope(k: Option<usize>) -> String {
    match k {
        Some(k) => format!("Top-{k}"),
        None => "All".to_string(),
    }
}

fn eval_markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("| Scope | Precision | Recall | F1 | Accuracy |\n");
    s.push_str("|---|---|---|---|---|\n");
    let _ = writeln!(
        s,
        "| {} | {:.4} | {:.4} | {:.4} | {} ({:.1}%) |",
        scope(r.k),
        r.macro_precision,
        r.macro_recall,
        r.macro_f1,
        r.accuracy_count,
        r.accuracy_pct
    );
    s.push_str("\n| CVE | Precision | Recall | F1 | Hit |\n");
    s.push_str("|---|---|---|---|---|\n");
    for c in &r.per_cve {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {} |",
            c.cve_id,
            c.precision,
            c.recall,
            c.f1,
            if c.hit { "yes" } else { "no" }
        );
    }
    s
}

fn eval_csv(r: &EvalReport) -> String {
    let mut s = String::from("cve_id,precision,recall,f1,hit\n");
    for c in &r.per_cve {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{}", c.cve_id, c.precision, c.recall, c.f1, c.hit);
    }
    let _ = writeln!(
        s,
        "macro,{:.6},{:.6},{:.6},{}",
        r.macro_precision, r.macro_recall, r.macro_f1, r.accuracy_count
    );
    s
}

const STATS_COLUMNS: &str = "count,mean,median,std,skewness,q1,q3,min,max";

fn stats_values(st: &CandidateStats) -> [String; 9] {
    [
        st.count.to_string(),
        format!("{:.4}", st.mean),
        format!("{:.4}", st.median),
        format!("{:.4}", st.std),
        format!("{:.4}", st.skewness),
        format!("{:.4}", st.q1),
        format!("{:.4}", st.q3),
        st.min.to_string(),
        st.max.to_string(),
    ]
}

/// Render deterministically. JSON output parses back to the same value.
pub fn emit_report(report: Reportable<'_>, format: ReportFormat) -> String {
    match (report, format) {
        (Reportable::Eval(r), ReportFormat::Json) => json(r),
        (Reportable::Stats(r), ReportFormat::Json) => json(r),
        (Reportable::Eval(r), ReportFormat::Markdown) => eval_markdown(r),
        (Reportable::Eval(r), ReportFormat::Csv) => eval_csv(r),
        (Reportable::Stats(st), ReportFormat::Markdown) => {
            let cols: Vec<&str> = STATS_COLUMNS.split(',').collect();
            format!(
                "| {} |\n|{}\n| {} |\n",
                cols.join(" | "),
                "---|".repeat(cols.len()),
                stats_values(st).join(" | ")
            )
        }
        (Reportable::Stats(st), ReportFormat::Csv) => format!("{STATS_COLUMNS}\n{}\n", stats_values(st).join(",")),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::super::{candidate_stats, score, EvalRecord};
    use super::*;

    fn perfect() -> EvalReport {
        score(
            &[EvalRecord {
                cve_id: "CVE-2020-5236".into(),
                predicted: vec!["a".into()],
                truth: vec!["a".into()],
                ranked: true,
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn markdown_row() {
        let md = emit_report(Reportable::Eval(&perfect()), ReportFormat::Markdown);
        assert!(md.contains("| All | 1.0000 | 1.0000 | 1.0000 | 1 (100.0%) |"), "{md}");
    }

    #[test]
    fn json_round_trip() {
        let r = perfect();
        let text = emit_report(Reportable::Eval(&r), ReportFormat::Json);
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let st = candidate_stats(&[1, 2, 3, 40]).unwrap();
        let back: CandidateStats = serde_json::from_str(&emit_report(Reportable::Stats(&st), ReportFormat::Json)).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn csv_and_format_names() {
        let csv = emit_report(Reportable::Eval(&perfect()), ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!("MD".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("xml".parse::<ReportFormat>().is_err());
        let st = candidate_stats(&[2, 4, 6]).unwrap();
        let csv = emit_report(Reportable::Stats(&st), ReportFormat::Csv);
        assert_eq!(csv.lines().nth(1).unwrap(), "3,4.0000,4.0000,1.6330,0.0000,3.0000,5.0000,2,6");
    }
}
