//! Candidate commit mining: tag resolution, version ranges and multi-branch
//! cross-filtering by commit-message frequency.

mod diff;
mod filter;
mod git;
mod version;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use diff::{parse_unified_diff, DiffHunk, ParsedDiff};
pub use filter::{
    build_candidates, cross_filter, normalize_message, resolve_ranges, CandidateOptions, CandidateSet, CapNote, CommitRange,
    FilterTrace, VersionPair, DEFAULT_MAX_CANDIDATES,
};
pub use git::{acquire_repo, clone_dir_name, Repo};
pub use version::{normalize_version, VersionKey};

use crate::vuln_intel::VersionHint;

#[derive(Debug, thiserror::Error)]
pub enum RepoError {
    #[error("{0} is not a git repository")]
    NotARepository(PathBuf),
    #[error("git {args} failed: {stderr}")]
    Git { args: String, stderr: String },
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("no tag matches version {version:?}; nearest tags: {}", .nearest.join(", "))]
    NoTag { version: String, nearest: Vec<String> },
    #[error("version {version:?} matches several tags: {}", .matches.join(", "))]
    AmbiguousTag { version: String, matches: Vec<String> },
    #[error("no fixed-version hint matched a tag: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    NoHintMatched(Vec<RepoError>),
    #[error("every version range is empty; no candidate commits")]
    EmptyCandidates,
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}

/// A repository tag resolved to the commit it names.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionTag {
    pub name: String,
    pub normalized: String,
    pub commit_hash: String,
    pub tag_date: i64,
}

impl VersionTag {
    pub fn key(&self) -> VersionKey {
        VersionKey::parse(&self.normalized)
    }
}

/// One git commit with its diff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub hash: String,
    pub abbrev: String,
    pub message: String,
    pub author_date: i64,
    pub commit_date: i64,
    pub files: Vec<String>,
    pub hunks: Vec<DiffHunk>,
}

impl CommitRecord {
    pub fn title(&self) -> &str {
        self.message.lines().next().unwrap_or_default()
    }

    pub fn body(&self) -> &str {
        match self.message.split_once('\n') {
            Some((_, rest)) => rest,
            None => "",
        }
    }
}

fn sort_tags(tags: &mut [VersionTag]) {
    tags.sort_by(|a, b| {
        a.key()
            .cmp(&b.key())
            .then(a.tag_date.cmp(&b.tag_date))
            .then_with(|| a.name.cmp(&b.name))
    });
}

/// All tags, ascending by version key, then tag date, then name.
pub fn list_tags(repo: &Repo) -> Result<Vec<VersionTag>, RepoError> {
    let mut tags = repo.raw_tags()?;
    sort_tags(&mut tags);
    Ok(tags)
}

/// Resolve a fixed-version hint to exactly one tag: exact name, then
/// normalized key, then a unique substring match.
pub fn match_fixed_tag(hint: &VersionHint, tags: &[VersionTag]) -> Result<VersionTag, RepoError> {
    let wanted = hint.fixed_version.trim();
    if let Some(t) = tags.iter().find(|t| t.name == wanted) {
        return Ok(t.clone());
    }
    let wanted_norm = normalize_version(wanted);
    if let Some(t) = tags.iter().find(|t| t.normalized == wanted_norm) {
        return Ok(t.clone());
    }
    let lowered = wanted.to_ascii_lowercase();
    let subs: Vec<&VersionTag> = tags
        .iter()
        .filter(|t| t.name.to_ascii_lowercase().contains(&lowered) || t.normalized.contains(&wanted_norm))
        .collect();
    match subs.as_slice() {
        [one] => Ok((*one).clone()),
        [] => {
            let mut scored: Vec<(f64, &VersionTag)> = tags
                .iter()
                .map(|t| (strsim::normalized_levenshtein(&t.normalized, &wanted_norm), t))
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
            Err(RepoError::NoTag {
                version: wanted.to_string(),
                nearest: scored.iter().take(3).map(|(_, t)| t.name.clone()).collect(),
            })
        }
        many => Err(RepoError::AmbiguousTag {
            version: wanted.to_string(),
            matches: many.iter().map(|t| t.name.clone()).collect(),
        }),
    }
}

/// The tag preceding `fixed`: the greatest smaller version on the same
/// release line when one exists, otherwise the global predecessor. `tags`
/// must be sorted as by [`list_tags`].
pub fn prior_tag<'a>(fixed: &VersionTag, tags: &'a [VersionTag]) -> Option<&'a VersionTag> {
    let fixed_key = fixed.key();
    let smaller: Vec<&VersionTag> = tags
        .iter()
        .filter(|t| t.key() < fixed_key && t.commit_hash != fixed.commit_hash)
        .collect();
    smaller
        .iter()
        .rev()
        .find(|t| t.key().same_release_line(&fixed_key))
        .or(smaller.last())
        .copied()
}

/// The tag following `fixed`, preferring the same release line.
pub fn next_tag<'a>(fixed: &VersionTag, tags: &'a [VersionTag]) -> Option<&'a VersionTag> {
    let fixed_key = fixed.key();
    let larger: Vec<&VersionTag> = tags
        .iter()
        .filter(|t| t.key() > fixed_key && t.commit_hash != fixed.commit_hash)
        .collect();
    larger
        .iter()
        .find(|t| t.key().same_release_line(&fixed_key))
        .or(larger.first())
        .copied()
}

/// Commits in `prior..fixed`, where prior is chosen by [`prior_tag`]. With no
/// prior the full history up to `fixed` is returned.
pub fn commit_range(
    repo: &Repo,
    fixed: &VersionTag,
    tags: &[VersionTag],
) -> Result<(Option<VersionTag>, Vec<CommitRecord>), RepoError> {
    let prior = prior_tag(fixed, tags).cloned();
    let exclude: Vec<&str> = prior.iter().map(|p| p.commit_hash.as_str()).collect();
    let commits = repo.log(&[fixed.commit_hash.as_str()], &exclude)?;
    Ok((prior, commits))
}
