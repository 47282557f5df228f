//! Widen the voted patch set with related commits from around the fixed
//! version.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::par::map_ordered;
use crate::repo_miner::{next_tag, normalize_message, prior_tag, CommitRecord, Repo, RepoError, VersionTag};
use crate::vuln_intel::VulnRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    SameDiff,
    MessageContainment,
    CveOrIssueRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedCommit {
    pub hash: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchResult {
    pub cve_id: String,
    pub core: Vec<String>,
    pub expanded: Vec<ExpandedCommit>,
    /// `core` followed by `expanded`, deduplicated.
    pub final_set: Vec<String>,
}

/// Commits in `(prior(prior(fixed)), next(fixed)]`, clipped at the ends of
/// the tag list. `fixed` itself is always included, since the next tag may
/// sit on another branch.
pub fn build_search_db(repo: &Repo, fixed: &VersionTag, tags: &[VersionTag]) -> Result<Vec<CommitRecord>, RepoError> {
    let mut include = vec![fixed.commit_hash.as_str()];
    if let Some(next) = next_tag(fixed, tags) {
        include.push(next.commit_hash.as_str());
    }
    let lower = prior_tag(fixed, tags).and_then(|p| prior_tag(p, tags));
    let exclude: Vec<&str> = lower.iter().map(|t| t.commit_hash.as_str()).collect();
    repo.log(&include, &exclude)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-file patch text with line numbers and whitespace differences removed.
fn patch_texts(commit: &CommitRecord) -> BTreeMap<&str, String> {
    let mut out: BTreeMap<&str, String> = BTreeMap::new();
    for h in &commit.hunks {
        let text = out.entry(h.file.as_str()).or_default();
        for (_, l) in &h.removed_lines {
            text.push('-');
            text.push_str(&collapse_ws(l));
            text.push('\n');
        }
        for (_, l) in &h.added_lines {
            text.push('+');
            text.push_str(&collapse_ws(l));
            text.push('\n');
        }
    }
    out.retain(|_, t| !t.is_empty());
    out
}

struct MessageParts {
    title: String,
    body: String,
}

fn message_parts(commit: &CommitRecord) -> MessageParts {
    MessageParts {
        title: normalize_message(commit.title()),
        body: normalize_message(commit.body()),
    }
}

fn contains_either(a: &str, b: &str) -> bool {
    !a.is_empty() && !b.is_empty() && (a.contains(b) || b.contains(a))
}

static ISSUE_URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:/issues/|/pull/|/merge_requests/|show_bug\.cgi\?id=)(\d+)|/browse/([A-Z][A-Z0-9]+-\d+)").unwrap()
});
static ISSUE_INLINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)(?:^|[^\w&])(?:#|GH-)(\d+)\b").unwrap());

/// Issue identifiers mentioned by the record's references: bare numbers and
/// tracker keys such as `PROJ-123`.
pub fn harvest_issue_ids(record: &VulnRecord) -> BTreeSet<String> {
    let mut ids = BTreeSet::new();
    for r in record.references.iter().chain(record.patch_urls.iter().flatten()) {
        for c in ISSUE_URL.captures_iter(r) {
            if let Some(m) = c.get(1).or_else(|| c.get(2)) {
                ids.insert(m.as_str().to_ascii_uppercase());
            }
        }
        for c in ISSUE_INLINE.captures_iter(r) {
            ids.insert(c[1].to_string());
        }
    }
    ids
}

fn issue_matchers(ids: &BTreeSet<String>) -> Vec<Regex> {
    ids.iter()
        .map(|id| {
            let id = regex::escape(id);
            let pat = if id.chars().all(|c| c.is_ascii_digit()) {
                format!(r"(?i)(?:#|GH-|/issues/|/pull/|bug\s+|id=){id}\b")
            } else {
                format!(r"(?i)\b{id}\b")
            };
            Regex::new(&pat).expect("escaped issue id")
        })
        .collect()
}

/// Add db commits related to any core commit. Relations are tested in the
/// order same diff, message containment, CVE or issue reference; the first
/// that holds is recorded.
pub fn expand(core: &[CommitRecord], db: &[CommitRecord], record: &VulnRecord) -> PatchResult {
    let core_hashes: HashSet<&str> = core.iter().map(|c| c.hash.as_str()).collect();
    let core_patches: Vec<BTreeMap<&str, String>> = core.iter().map(patch_texts).collect();
    let core_msgs: Vec<MessageParts> = core.iter().map(message_parts).collect();
    let cve = record.cve_id.as_str().to_ascii_lowercase();
    let issues = issue_matchers(&harvest_issue_ids(record));

    let relations = map_ordered(db, true, |c| {
        if core_hashes.contains(c.hash.as_str()) {
            return None;
        }
        let patches = patch_texts(c);
        let same_diff = core_patches
            .iter()
            .any(|cp| patches.iter().any(|(f, t)| cp.get(f) == Some(t)));
        if same_diff {
            return Some(Relation::SameDiff);
        }
        let msg = message_parts(c);
        if core_msgs
            .iter()
            .any(|m| contains_either(&m.title, &msg.title) || contains_either(&m.body, &msg.body))
        {
            return Some(Relation::MessageContainment);
        }
        if c.message.to_ascii_lowercase().contains(&cve) || issues.iter().any(|re| re.is_match(&c.message)) {
            return Some(Relation::CveOrIssueRef);
        }
        None
    });

    let mut seen: HashSet<String> = core.iter().map(|c| c.hash.clone()).collect();
    let mut expanded = Vec::new();
    for (c, rel) in db.iter().zip(relations) {
        if let Some(relation) = rel {
            if seen.insert(c.hash.clone()) {
                expanded.push(ExpandedCommit {
                    hash: c.hash.clone(),
                    relation,
                });
            }
        }
    }
    let mut final_set: Vec<String> = Vec::new();
    for h in core.iter().map(|c| &c.hash).chain(expanded.iter().map(|e| &e.hash)) {
        if !final_set.contains(h) {
            final_set.push(h.clone());
        }
    }
    PatchResult {
        cve_id: record.cve_id.to_string(),
        core: core.iter().map(|c| c.hash.clone()).collect(),
        expanded,
        final_set,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repo_miner::{list_tags, DiffHunk};
    use crate::testkit::FixtureRepo;
    use crate::vuln_intel::CveId;

    fn commit(n: u8, message: &str, file: &str, removed: &[&str], added: &[&str]) -> CommitRecord {
        let hash = format!("{:040x}", n);
        CommitRecord {
            abbrev: hash[..7].to_string(),
            hash,
            message: message.into(),
            author_date: n as i64,
            commit_date: n as i64,
            files: vec![file.into()],
            hunks: vec![DiffHunk {
                file: file.into(),
                old_start: n as usize,
                old_len: removed.len(),
                new_start: n as usize,
                new_len: added.len(),
                removed_lines: removed.iter().enumerate().map(|(i, l)| (i + 1, l.to_string())).collect(),
                added_lines: added.iter().enumerate().map(|(i, l)| (i + 1, l.to_string())).collect(),
            }],
        }
    }

    fn record() -> VulnRecord {
        let mut r = VulnRecord::new(CveId::parse("CVE-2020-5236").unwrap(), "ReDoS in waitress");
        r.references = vec!["https://github.com/Pylons/waitress/issues/282".into()];
        r
    }

    #[test]
    fn relation_precedence() {
        let core = commit(1, "Fix header parsing\n\nReject bad chunk sizes", "a.c", &["x = 1;"], &["x = 2;"]);
        let db = vec![
            core.clone(),
            // cherry-pick: same lines at different positions, also same message
            commit(2, "Fix header parsing\n\nReject bad chunk sizes\n\n(cherry picked from commit 1)", "a.c", &["x  =  1;"], &["x = 2;"]),
            commit(3, "Fix header parsing on 1.x", "b.c", &["y"], &["z"]),
            commit(4, "Mention CVE-2020-5236 in changelog", "NEWS", &[], &["entry"]),
            commit(5, "Follow-up for #282", "c.c", &[], &["w"]),
            commit(6, "Unrelated refactor", "d.c", &["p"], &["q"]),
            commit(7, "See issue 2820", "e.c", &[], &["v"]),
        ];
        let r = expand(std::slice::from_ref(&core), &db, &record());
        let rel: Vec<(u8, Relation)> = r
            .expanded
            .iter()
            .map(|e| (u8::from_str_radix(&e.hash[38..], 16).unwrap(), e.relation))
            .collect();
        assert_eq!(
            rel,
            vec![
                (2, Relation::SameDiff),
                (3, Relation::MessageContainment),
                (4, Relation::CveOrIssueRef),
                (5, Relation::CveOrIssueRef),
            ]
        );
        assert_eq!(r.final_set[0], core.hash);
        assert_eq!(r.final_set.len(), 5);
    }

    #[test]
    fn empty_db_keeps_core() {
        let core = commit(1, "Fix", "a.c", &["a"], &["b"]);
        let r = expand(std::slice::from_ref(&core), &[], &record());
        assert_eq!(r.final_set, vec![core.hash.clone()]);
        assert!(r.expanded.is_empty());
    }

    #[test]
    fn issue_harvest() {
        let mut r = record();
        r.references.push("https://issues.apache.org/jira/browse/HTTPCLIENT-1803".into());
        r.references.push("https://bugzilla.redhat.com/show_bug.cgi?id=1790231".into());
        r.references.push("fixed in GH-77".into());
        let ids: Vec<String> = harvest_issue_ids(&r).into_iter().collect();
        assert_eq!(ids, vec!["1790231", "282", "77", "HTTPCLIENT-1803"]);
    }

    fn reach(fx: &FixtureRepo, include: &str, exclude: Option<&str>) -> BTreeSet<String> {
        let mut args = vec!["rev-list", include];
        let ex;
        if let Some(e) = exclude {
            ex = format!("^{e}");
            args.push(&ex);
        }
        fx.git(&args).lines().map(str::to_string).collect()
    }

    #[test]
    fn search_db_ranges() {
        let fx = FixtureRepo::new();
        for v in 1..=4 {
            fx.commit(&format!("work {v}"), &[("f.txt", &format!("{v}\n"))]);
            fx.tag(&format!("v{v}.0.0"));
        }
        fx.commit("tail", &[("f.txt", "tail\n")]);
        let repo = Repo::open(fx.path()).unwrap();
        let tags = list_tags(&repo).unwrap();
        let db: BTreeSet<String> = build_search_db(&repo, &tags[2], &tags).unwrap().into_iter().map(|c| c.hash).collect();
        assert_eq!(db, reach(&fx, "v4.0.0", Some("v1.0.0")));

        let db: BTreeSet<String> = build_search_db(&repo, &tags[0], &tags).unwrap().into_iter().map(|c| c.hash).collect();
        assert_eq!(db, reach(&fx, "v2.0.0", None));
    }

    #[test]
    fn search_db_single_tag() {
        let fx = FixtureRepo::new();
        fx.commit("a", &[("f", "1")]);
        fx.commit("b", &[("f", "2")]);
        fx.tag("1.0");
        let repo = Repo::open(fx.path()).unwrap();
        let tags = list_tags(&repo).unwrap();
        assert_eq!(build_search_db(&repo, &tags[0], &tags).unwrap().len(), 2);
    }
}
