use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::diff::parse_unified_diff;
use super::version::normalize_version;
use super::{CommitRecord, RepoError, VersionTag};

const RECORD_SEP: char = '\u{1e}';
const FIELD_SEP: char = '\u{1f}';

/// Read-only handle on a local git clone, driven through the `git` binary.
#[derive(Debug, Clone)]
pub struct Repo {
    path: PathBuf,
}

impl Repo {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RepoError> {
        let path = path.as_ref().to_path_buf();
        if !path.is_dir() {
            return Err(RepoError::NotARepository(path));
        }
        let repo = Self { path };
        match repo.git(&["rev-parse", "--git-dir"]) {
            Ok(_) => Ok(repo),
            Err(_) => Err(RepoError::NotARepository(repo.path)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("-C")
            .arg(&self.path)
            .args(["-c", "core.quotepath=off", "-c", "log.showSignature=false"])
            .env("LC_ALL", "C")
            .env("GIT_TERMINAL_PROMPT", "0");
        cmd
    }

    pub(crate) fn git_bytes(&self, args: &[&str]) -> Result<Vec<u8>, RepoError> {
        let out = self.command().args(args).output().map_err(|e| RepoError::Git {
            args: args.join(" "),
            stderr: e.to_string(),
        })?;
        if !out.status.success() {
            return Err(RepoError::Git {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    pub(crate) fn git(&self, args: &[&str]) -> Result<String, RepoError> {
        self.git_bytes(args).map(|b| String::from_utf8_lossy(&b).into_owned())
    }

    /// All tags peeled to commits, unsorted.
    pub(crate) fn raw_tags(&self) -> Result<Vec<VersionTag>, RepoError> {
        let out = self.git(&[
            "for-each-ref",
            "refs/tags",
            "--format=%(refname:short)%1f%(objecttype)%1f%(objectname)%1f%(*objectname)%1f%(creatordate:unix)",
        ])?;
        let mut tags = Vec::new();
        for line in out.lines().filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(FIELD_SEP).collect();
            if f.len() != 5 {
                continue;
            }
            let commit = match f[1] {
                "commit" => f[2].to_string(),
                "tag" => {
                    // annotated tags may point at other tags; let git peel them
                    let peeled = if f[3].is_empty() {
                        self.git(&["rev-parse", &format!("{}^{{commit}}", f[2])])?.trim().to_string()
                    } else {
                        f[3].to_string()
                    };
                    if self.git(&["cat-file", "-t", &peeled]).map(|t| t.trim() == "commit").unwrap_or(false) {
                        peeled
                    } else {
                        continue;
                    }
                }
                _ => continue,
            };
            tags.push(VersionTag {
                name: f[0].to_string(),
                normalized: normalize_version(f[0]),
                commit_hash: commit.to_ascii_lowercase(),
                tag_date: f[4].trim().parse().unwrap_or(0),
            });
        }
        Ok(tags)
    }

    /// Commits reachable from any of `include` and from none of `exclude`,
    /// ordered by commit date ascending (parents first on ties).
    pub fn log(&self, include: &[&str], exclude: &[&str]) -> Result<Vec<CommitRecord>, RepoError> {
        let format = format!("--format={RECORD_SEP}%H{FIELD_SEP}%at{FIELD_SEP}%ct{FIELD_SEP}%B{FIELD_SEP}");
        let mut args: Vec<String> = vec![
            "log".into(),
            format,
            "-p".into(),
            "-U0".into(),
            "--no-color".into(),
            "--no-ext-diff".into(),
            "--no-renames".into(),
            "--topo-order".into(),
            "--reverse".into(),
        ];
        args.extend(include.iter().map(|s| s.to_string()));
        args.extend(exclude.iter().map(|s| format!("^{s}")));
        args.push("--".into());
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = self.git(&refs)?;
        let mut commits: Vec<CommitRecord> = out
            .split(RECORD_SEP)
            .filter(|chunk| !chunk.trim().is_empty())
            .filter_map(parse_log_record)
            .collect();
        commits.sort_by_key(|c| c.commit_date);
        Ok(commits)
    }

    /// Contents of `path` at `rev`, or `None` when the path does not exist there.
    pub fn file_at(&self, rev: &str, path: &str) -> Result<Option<Vec<u8>>, RepoError> {
        let spec = format!("{rev}:{path}");
        if self.git_bytes(&["cat-file", "-e", &spec]).is_err() {
            return Ok(None);
        }
        self.git_bytes(&["cat-file", "blob", &spec]).map(Some)
    }

    pub fn file_size_at(&self, rev: &str, path: &str) -> Option<u64> {
        let spec = format!("{rev}:{path}");
        self.git(&["cat-file", "-s", &spec]).ok()?.trim().parse().ok()
    }

    pub fn rev_parse(&self, rev: &str) -> Result<String, RepoError> {
        Ok(self.git(&["rev-parse", "--verify", &format!("{rev}^{{commit}}")])?.trim().to_string())
    }
}

fn parse_log_record(chunk: &str) -> Option<CommitRecord> {
    let mut fields = chunk.splitn(5, FIELD_SEP);
    let hash = fields.next()?.trim().to_ascii_lowercase();
    let author_date = fields.next()?.trim().parse().ok()?;
    let commit_date = fields.next()?.trim().parse().ok()?;
    let message = fields.next()?.trim_end().to_string();
    let patch = fields.next().unwrap_or_default();
    let diff = parse_unified_diff(patch);
    Some(CommitRecord {
        abbrev: hash[..7.min(hash.len())].to_string(),
        hash,
        message,
        author_date,
        commit_date,
        files: diff.files,
        hunks: diff.hunks,
    })
}

/// Directory name for a cached clone: `<owner>__<name>`.
pub fn clone_dir_name(repo: &str) -> String {
    let trimmed = repo.trim().trim_end_matches('/').trim_end_matches(".git");
    let parts: Vec<&str> = trimmed
        .split(['/', ':'])
        .filter(|p| !p.is_empty())
        .collect();
    match parts.as_slice() {
        [.., owner, name] => format!("{owner}__{name}"),
        [name] => (*name).to_string(),
        [] => "repo".to_string(),
    }
}

/// Resolve `spec` (a local path or a clone URL) to a repository handle,
/// cloning into `<cache_dir>/repos/<owner>__<name>` when needed. Clones and
/// fetches of one directory are serialized by a lock file.
pub fn acquire_repo(spec: &str, cache_dir: &Path, refresh: bool) -> Result<Repo, RepoError> {
    let local = Path::new(spec);
    if local.exists() {
        return Repo::open(local);
    }
    let repos = cache_dir.join("repos");
    std::fs::create_dir_all(&repos).map_err(|e| RepoError::Io(repos.clone(), e))?;
    let dir = repos.join(clone_dir_name(spec));
    let lock_path = repos.join(format!("{}.lock", clone_dir_name(spec)));
    let lock = File::create(&lock_path).map_err(|e| RepoError::Io(lock_path.clone(), e))?;
    lock.lock().map_err(|e| RepoError::Io(lock_path.clone(), e))?;

    let url = if spec.contains("://") || spec.starts_with("git@") {
        spec.to_string()
    } else {
        format!("https://github.com/{}", spec.trim_matches('/'))
    };
    let result = if dir.join(".git").exists() || dir.join("HEAD").exists() {
        let repo = Repo::open(&dir)?;
        if refresh {
            repo.git(&["fetch", "--tags", "--force", "--quiet", "origin"])?;
        }
        Ok(repo)
    } else {
        let status = Command::new("git")
            .args(["clone", "--quiet", &url])
            .arg(&dir)
            .env("GIT_TERMINAL_PROMPT", "0")
            .output()
            .map_err(|e| RepoError::Git {
                args: format!("clone {url}"),
                stderr: e.to_string(),
            })?;
        if !status.status.success() {
            return Err(RepoError::Git {
                args: format!("clone {url}"),
                stderr: String::from_utf8_lossy(&status.stderr).trim().to_string(),
            });
        }
        Repo::open(&dir)
    };
    let _ = lock.unlock();
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clone_dir_names() {
        assert_eq!(clone_dir_name("https://github.com/CTFd/CTFd.git"), "CTFd__CTFd");
        assert_eq!(clone_dir_name("ctfd/ctfd"), "ctfd__ctfd");
        assert_eq!(clone_dir_name("git@github.com:a/b.git"), "a__b");
    }

    #[test]
    fn open_rejects_plain_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Repo::open(dir.path()), Err(RepoError::NotARepository(_))));
    }
}
