use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::{parse_cpe, HintSource, VersionHint, VulnError, VulnRecord};
use crate::llm_gateway::Gateway;

const VERSION_EXTRACTION_TEMPLATE: &str = include_str!("../../templates/version_extraction.txt");

static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());
static PAIR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(\s*([^,()]+?)\s*,\s*([^()]+?)\s*\)").unwrap());

/// Rule cascade over the structured fields of a record. Returns an empty list
/// when neither the package/version fields nor any CPE bound are usable.
pub fn extract_version_hints(record: &VulnRecord) -> Vec<VersionHint> {
    if let (Some(pkg), Some(ver)) = (&record.package_name, &record.update_to_version) {
        if let Ok(h) = VersionHint::new(pkg.clone(), ver.clone(), HintSource::StructuredField) {
            return vec![h];
        }
    }

    let mut seen = HashSet::new();
    let mut hints = Vec::new();
    for entry in &record.cpes {
        let Some(bound) = entry.version_end_excluding() else {
            continue;
        };
        let Ok(cpe) = parse_cpe(entry.uri()) else {
            continue;
        };
        let repo = format!("{}/{}", cpe.vendor, cpe.product);
        let Ok(hint) = VersionHint::new(repo, bound, HintSource::Cpe) else {
            continue;
        };
        if seen.insert((hint.repo.clone(), hint.fixed_version.clone())) {
            hints.push(hint);
        }
    }
    hints
}

pub fn version_extraction_prompt(record: &VulnRecord) -> String {
    VERSION_EXTRACTION_TEMPLATE.replace("{CVE_DESCRIPTION}", record.description.trim())
}

/// Ask the model for (repository, version) pairs. Pairs whose version has
/// no digit are dropped.
pub fn llm_extract_version_hints(record: &VulnRecord, gateway: &Gateway) -> Result<Vec<VersionHint>, VulnError> {
    let prompt = version_extraction_prompt(record);
    let transcript = gateway.ask_text(&prompt, 0)?;
    parse_version_answer(&transcript.response_text)
}

pub(crate) fn parse_version_answer(response: &str) -> Result<Vec<VersionHint>, VulnError> {
    let caps = ANSWER_RE.captures(response).ok_or(VulnError::NoAnswerTag)?;
    let body = caps[1].trim();
    if body.is_empty() {
        return Err(VulnError::EmptyAnswer);
    }
    let mut seen = HashSet::new();
    let mut hints = Vec::new();
    for pair in PAIR_RE.captures_iter(body) {
        let repo = pair[1].trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace());
        let version = pair[2].trim_matches(|c: char| c == '"' || c == '\'' || c.is_whitespace());
        match VersionHint::new(repo, version, HintSource::LlmExtraction) {
            Ok(h) => {
                if seen.insert((h.repo.clone(), h.fixed_version.clone())) {
                    hints.push(h);
                }
            }
            Err(_) => log::debug!("discarding version pair ({repo}, {version})"),
        }
    }
    Ok(hints)
}
