//! Four-section prompt assembly for a batch of candidate commits.

mod templates;

use std::collections::BTreeMap;

use chrono::DateTime;
use serde::{Deserialize, Serialize};

pub use templates::{fill, TemplateSet};

use crate::code_context::FunctionContext;
use crate::repo_miner::CommitRecord;
use crate::vuln_intel::VulnRecord;

pub const DEFAULT_TOKEN_BUDGET: usize = 8000;

/// Approximate token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot build a prompt for an empty batch")]
    EmptyBatch,
    #[error("token budget {budget} too small; message-only prompt needs {minimal}")]
    BudgetTooSmall { budget: usize, minimal: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSection {
    pub abbrev: String,
    pub message: String,
    /// Rendered supplementary info and code contexts.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub cve_id: String,
    pub question: String,
    pub vuln_section: String,
    pub commit_sections: Vec<CommitSection>,
    pub guidance: String,
    pub token_estimate: usize,
    pub text: String,
}

impl PromptBundle {
    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Detail {
    Full,
    Signature,
    Dropped,
}

fn format_date(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d %H:%M:%S UTC").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn render_digest(commit: &CommitRecord, contexts: &[FunctionContext], detail: &[Detail]) -> String {
    let mut out = String::new();
    out.push_str(&format!("Date: {}\n", format_date(commit.commit_date)));
    if !commit.files.is_empty() {
        out.push_str(&format!("Changed files: {}\n", commit.files.join(", ")));
    }
    let shown: Vec<(&FunctionContext, Detail)> = contexts
        .iter()
        .zip(detail)
        .filter(|(_, d)| **d != Detail::Dropped)
        .map(|(c, d)| (c, *d))
        .collect();
    if !shown.is_empty() {
        out.push_str("Modified code:\n");
    }
    for (ctx, d) in shown {
        out.push_str(&format!(
            "[{} lines {}-{} ({})]\n",
            ctx.file,
            ctx.span.0,
            ctx.span.1,
            ctx.language.name()
        ));
        let text = match d {
            Detail::Full => ctx.body.as_str(),
            _ => ctx.declaration.as_str(),
        };
        if !text.is_empty() {
            out.push_str("```\n");
            out.push_str(text);
            out.push_str("\n```\n");
        }
    }
    out
}

fn render_section(abbrev: &str, message: &str, digest: &str) -> String {
    format!("### Commit {abbrev}\nMessage:\n{}\n{digest}", message.trim_end())
}

struct Assembly<'a> {
    batch: &'a [&'a CommitRecord],
    contexts: Vec<&'a [FunctionContext]>,
    detail: Vec<Vec<Detail>>,
    question: String,
    vuln_section: String,
    guidance: String,
    commit_info: &'a str,
}

impl Assembly<'_> {
    fn sections(&self) -> Vec<CommitSection> {
        self.batch
            .iter()
            .enumerate()
            .map(|(i, c)| CommitSection {
                abbrev: c.abbrev.clone(),
                message: c.message.trim_end().to_string(),
                digest: render_digest(c, self.contexts[i], &self.detail[i]),
            })
            .collect()
    }

    fn render(&self) -> (Vec<CommitSection>, String) {
        let sections = self.sections();
        let commits = sections
            .iter()
            .map(|s| render_section(&s.abbrev, &s.message, &s.digest))
            .collect::<Vec<_>>()
            .join("\n");
        let commit_info = fill(self.commit_info, &[("COMMITS", commits.trim_end())]);
        let text = [
            self.question.trim_end(),
            self.vuln_section.trim_end(),
            commit_info.trim_end(),
            self.guidance.trim_end(),
        ]
        .join("\n\n")
            + "\n";
        (sections, text)
    }

    fn estimate(&self) -> usize {
        estimate_tokens(&self.render().1)
    }
}

/// Render the prompt for one batch. Contexts are looked up by full commit
/// hash and are assumed ranked best-first. When over budget, contexts are
/// shed lowest rank first, then bodies shrink to signatures, then the last
/// contexts go; commits themselves are never removed.
pub fn build_prompt(
    record: &VulnRecord,
    batch: &[&CommitRecord],
    contexts: &BTreeMap<String, Vec<FunctionContext>>,
    templates: &TemplateSet,
    token_budget: usize,
) -> Result<PromptBundle, PromptError> {
    if batch.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    let id = record.cve_id.as_str();
    let description = record.description.trim();
    let vars = [("CVE_ID", id), ("CVE_DESCRIPTION", description)];
    let ctx_lists: Vec<&[FunctionContext]> = batch
        .iter()
        .map(|c| contexts.get(&c.hash).map(Vec::as_slice).unwrap_or(&[]))
        .collect();
    let mut asm = Assembly {
        batch,
        detail: ctx_lists.iter().map(|l| vec![Detail::Full; l.len()]).collect(),
        contexts: ctx_lists,
        question: fill(&templates.question, &vars),
        vuln_section: fill(&templates.vuln_info, &vars),
        guidance: fill(&templates.guidance, &[("EXAMPLE", templates.example.trim_end()), ("CVE_ID", id)]),
        commit_info: &templates.commit_info,
    };

    let over = |asm: &Assembly| asm.estimate() > token_budget;
    if over(&asm) {
        let max_len = asm.contexts.iter().map(|c| c.len()).max().unwrap_or(0);
        'shrink: {
            for rank in (1..max_len).rev() {
                for i in 0..asm.batch.len() {
                    if rank < asm.detail[i].len() {
                        asm.detail[i][rank] = Detail::Dropped;
                        if !over(&asm) {
                            break 'shrink;
                        }
                    }
                }
            }
            for target in [Detail::Signature, Detail::Dropped] {
                for i in 0..asm.batch.len() {
                    if let Some(d) = asm.detail[i].first_mut() {
                        *d = target;
                        if !over(&asm) {
                            break 'shrink;
                        }
                    }
                }
            }
            return Err(PromptError::BudgetTooSmall {
                budget: token_budget,
                minimal: asm.estimate(),
            });
        }
    }

    let (commit_sections, text) = asm.render();
    Ok(PromptBundle {
        cve_id: id.to_string(),
        question: asm.question,
        vuln_section: asm.vuln_section,
        commit_sections,
        guidance: asm.guidance,
        token_estimate: estimate_tokens(&text).max(1),
        text,
    })
}
