use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{commit_range, list_tags, match_fixed_tag, CommitRecord, Repo, RepoError, VersionTag};
use crate::vuln_intel::{CveId, VersionHint};

pub const DEFAULT_MAX_CANDIDATES: usize = 2000;

static CHERRY_PICK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\(cherry picked from commit [0-9a-f]+\)$").unwrap());
const STRIPPED_TRAILERS: [&str; 2] = ["signed-off-by:", "reviewed-by:"];

/// Canonical form of a commit message for cross-branch comparison: drops
/// cherry-pick markers and sign-off/review trailers, collapses whitespace and
/// case-folds.
pub fn normalize_message(message: &str) -> String {
    let kept: Vec<&str> = message
        .lines()
        .map(str::trim)
        .filter(|line| {
            let lower = line.to_lowercase();
            !CHERRY_PICK_RE.is_match(line) && !STRIPPED_TRAILERS.iter().any(|t| lower.starts_with(t))
        })
        .collect();
    kept.join(" ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Commits between one (prior, fixed] tag pair, produced for one hint.
#[derive(Debug, Clone)]
pub struct CommitRange {
    pub hint: VersionHint,
    pub prior: Option<VersionTag>,
    pub fixed: VersionTag,
    pub commits: Vec<CommitRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionPair {
    pub prior: Option<VersionTag>,
    pub fixed: VersionTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapNote {
    pub limit: usize,
    pub before: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub range_count: usize,
    /// Whether the frequency filter was in effect (two or more ranges).
    pub cross_filter_applied: bool,
    pub max_frequency: usize,
    /// Normalized-message frequency of every commit seen, by hash.
    pub frequencies: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<CapNote>,
}

/// The filtered, ordered commits considered for one CVE.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub cve_id: CveId,
    pub repo: String,
    pub version_pairs: Vec<VersionPair>,
    pub commits: Vec<CommitRecord>,
    pub filter_trace: FilterTrace,
}

impl CandidateSet {
    pub fn get(&self, hash: &str) -> Option<&CommitRecord> {
        self.commits.iter().find(|c| c.hash == hash)
    }
}

/// Keep the commits whose normalized message occurs in the largest number
/// of distinct ranges. A single range passes through unfiltered.
pub fn cross_filter(cve_id: &CveId, ranges: &[CommitRange]) -> Result<CandidateSet, RepoError> {
    if ranges.is_empty() {
        return Err(RepoError::Precondition("cross_filter needs at least one range"));
    }
    if ranges.iter().all(|r| r.commits.is_empty()) {
        return Err(RepoError::EmptyCandidates);
    }

    let mut ranges_by_message: HashMap<String, BTreeSet<usize>> = HashMap::new();
    let mut union: Vec<(&CommitRecord, String)> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, range) in ranges.iter().enumerate() {
        for commit in &range.commits {
            let norm = normalize_message(&commit.message);
            ranges_by_message.entry(norm.clone()).or_default().insert(idx);
            if seen.insert(commit.hash.as_str()) {
                union.push((commit, norm));
            }
        }
    }

    let frequencies: BTreeMap<String, usize> = union
        .iter()
        .map(|(c, norm)| (c.hash.clone(), ranges_by_message[norm].len()))
        .collect();
    let max_frequency = frequencies.values().copied().max().unwrap_or(0);
    let applied = ranges.len() > 1;

    let mut commits: Vec<CommitRecord> = union
        .into_iter()
        .filter(|(c, _)| !applied || frequencies[&c.hash] == max_frequency)
        .map(|(c, _)| c.clone())
        .collect();
    commits.sort_by_key(|c| c.commit_date);

    Ok(CandidateSet {
        cve_id: cve_id.clone(),
        repo: ranges[0].hint.repo.clone(),
        version_pairs: ranges
            .iter()
            .map(|r| VersionPair {
                prior: r.prior.clone(),
                fixed: r.fixed.clone(),
            })
            .collect(),
        commits,
        filter_trace: FilterTrace {
            range_count: ranges.len(),
            cross_filter_applied: applied,
            max_frequency,
            frequencies,
            cap: None,
        },
    })
}

#[derive(Debug, Clone)]
pub struct CandidateOptions {
    pub max_candidates: usize,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Resolve every hint to a version range, then cross-filter. Hints that
/// match no tag are skipped as long as at least one resolves.
pub fn resolve_ranges(hints: &[VersionHint], repo: &Repo) -> Result<(Vec<VersionTag>, Vec<CommitRange>), RepoError> {
    if hints.is_empty() {
        return Err(RepoError::Precondition("at least one version hint is required"));
    }
    let tags = list_tags(repo)?;
    let mut ranges: Vec<CommitRange> = Vec::new();
    let mut failures = Vec::new();
    for hint in hints {
        let fixed = match match_fixed_tag(hint, &tags) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("hint {} {}: {e}", hint.repo, hint.fixed_version);
                failures.push(e);
                continue;
            }
        };
        if ranges.iter().any(|r| r.fixed.commit_hash == fixed.commit_hash) {
            continue;
        }
        let (prior, commits) = commit_range(repo, &fixed, &tags)?;
        ranges.push(CommitRange {
            hint: hint.clone(),
            prior,
            fixed,
            commits,
        });
    }
    if ranges.is_empty() {
        return Err(RepoError::NoHintMatched(failures));
    }
    Ok((tags, ranges))
}

pub fn build_candidates(
    cve_id: &CveId,
    hints: &[VersionHint],
    repo: &Repo,
    options: &CandidateOptions,
) -> Result<CandidateSet, RepoError> {
    let (_, ranges) = resolve_ranges(hints, repo)?;
    let mut set = cross_filter(cve_id, &ranges)?;
    apply_cap(&mut set, options.max_candidates);
    Ok(set)
}

/// Keep only the `limit` most recent commits.
pub(crate) fn apply_cap(set: &mut CandidateSet, limit: usize) {
    let before = set.commits.len();
    if before > limit {
        set.commits.drain(..before - limit);
        log::info!("{}: capped candidates from {before} to {limit}", set.cve_id);
        set.filter_trace.cap = Some(CapNote {
            limit,
            before,
            dropped: before - limit,
        });
    }
}
