use std::cell::Cell;
use std::path::{Path, PathBuf};
use std::process::Command;

/// A throwaway git repository with deterministic author, committer and
/// timestamps, so identical scripts always produce identical hashes.
pub struct FixtureRepo {
    _dir: Option<tempfile::TempDir>,
    path: PathBuf,
    clock: Cell<i64>,
}

const BASE_TIME: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

impl FixtureRepo {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("repo");
        Self::init_at(path, Some(dir))
    }

    /// Create the repository at `path`, which must not exist yet.
    pub fn at(path: &Path) -> Self {
        Self::init_at(path.to_path_buf(), None)
    }

    fn init_at(path: PathBuf, dir: Option<tempfile::TempDir>) -> Self {
        std::fs::create_dir_all(&path).expect("create repo dir");
        let repo = Self {
            _dir: dir,
            path,
            clock: Cell::new(BASE_TIME),
        };
        repo.git(&["init", "--quiet", "-b", "main"]);
        repo
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn git(&self, args: &[&str]) -> String {
        let t = self.clock.get();
        let date = format!("{t} +0000");
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.path)
            .args([
                "-c",
                "user.name=Fixture",
                "-c",
                "user.email=fixture@example.com",
                "-c",
                "commit.gpgsign=false",
                "-c",
                "tag.gpgsign=false",
                "-c",
                "core.autocrlf=false",
            ])
            .args(args)
            .env("GIT_AUTHOR_NAME", "Fixture")
            .env("GIT_AUTHOR_EMAIL", "fixture@example.com")
            .env("GIT_COMMITTER_NAME", "Fixture")
            .env("GIT_COMMITTER_EMAIL", "fixture@example.com")
            .env("GIT_AUTHOR_DATE", &date)
            .env("GIT_COMMITTER_DATE", &date)
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env("HOME", &self.path)
            .output()
            .expect("run git");
        assert!(
            out.status.success(),
            "git {:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).trim().to_string()
    }

    fn tick(&self) {
        self.clock.set(self.clock.get() + 60);
    }

    /// Write the given files and commit them; returns the new commit hash.
    pub fn commit(&self, message: &str, files: &[(&str, &str)]) -> String {
        for (rel, content) in files {
            let p = self.path.join(rel);
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent).unwrap();
            }
            std::fs::write(&p, content).unwrap();
            self.git(&["add", "--", rel]);
        }
        self.tick();
        self.git(&["commit", "--quiet", "--allow-empty", "-m", message]);
        self.head()
    }

    pub fn remove(&self, message: &str, paths: &[&str]) -> String {
        for rel in paths {
            self.git(&["rm", "--quiet", "--", rel]);
        }
        self.tick();
        self.git(&["commit", "--quiet", "-m", message]);
        self.head()
    }

    pub fn head(&self) -> String {
        self.git(&["rev-parse", "HEAD"])
    }

    pub fn tag(&self, name: &str) {
        self.tick();
        self.git(&["tag", name]);
    }

    pub fn tag_at(&self, name: &str, rev: &str) {
        self.tick();
        self.git(&["tag", name, rev]);
    }

    pub fn annotated_tag(&self, name: &str, rev: &str) {
        self.tick();
        self.git(&["tag", "-a", "-m", name, name, rev]);
    }

    pub fn checkout(&self, rev: &str) {
        self.git(&["checkout", "--quiet", rev]);
    }

    pub fn branch_from(&self, name: &str, rev: &str) {
        self.git(&["checkout", "--quiet", "-b", name, rev]);
    }

    /// `git cherry-pick -x`; returns the new commit hash.
    pub fn cherry_pick(&self, rev: &str) -> String {
        self.tick();
        self.git(&["cherry-pick", "-x", rev]);
        self.head()
    }
}

impl Default for FixtureRepo {
    fn default() -> Self {
        Self::new()
    }
}
