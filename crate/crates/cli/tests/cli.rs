use std::path::Path;
use std::process::{Command, Output};

use patchhunt_core::testkit::{FixtureRepo, MiniProject, MINI_CVE};
use serde_json::Value;

fn patchhunt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_patchhunt"))
        .arg("--cache-dir")
        .arg(dir.join("cache"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .env_remove("PATCHHUNT_API_KEY")
        .output()
        .expect("run patchhunt")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn locate_finds_the_planted_fix() {
    let dir = tempfile::tempdir().unwrap();
    let mp = MiniProject::create(&dir.path().join("fx"));
    let o = patchhunt(
        dir.path(),
        &[
            "--provider",
            "mock",
            "--mock-script",
            mp.script.to_str().unwrap(),
            "--dataset",
            mp.dataset.to_str().unwrap(),
            "locate",
            MINI_CVE,
            "--repo",
            mp.repo.path().to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let result = read_json(&dir.path().join("out").join(MINI_CVE).join("patch_result.json"));
    let finals: Vec<&str> = result["final_set"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(finals.contains(&mp.fix.as_str()), "{finals:?}");
    assert!(finals.contains(&mp.twin.as_str()), "{finals:?}");
    assert!(stdout(&o).contains(&mp.fix[..7]), "{}", stdout(&o));
}

#[test]
fn locate_unknown_cve_in_mock_mode() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("script.ndjson");
    std::fs::write(&script, "").unwrap();
    let o = patchhunt(
        dir.path(),
        &["--provider", "mock", "--mock-script", script.to_str().unwrap(), "locate", "CVE-2020-5236", "--repo", "."],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("error [vuln_intel]"), "{err}");
    assert!(err.contains("hint:"), "{err}");
}

#[test]
fn locate_unmatched_version_lists_nearest_tags() {
    let dir = tempfile::tempdir().unwrap();
    let fx = FixtureRepo::at(&dir.path().join("repo"));
    fx.commit("init", &[("a.c", "int a;\n")]);
    fx.tag("v1.0.0");
    fx.commit("more", &[("a.c", "int b;\n")]);
    fx.tag("v1.1.0");
    let script = dir.path().join("script.ndjson");
    std::fs::write(&script, "").unwrap();
    let ds = dir.path().join("ds.ndjson");
    std::fs::write(
        &ds,
        r#"{"cve_id":"CVE-2021-0001","description":"x","package_name":"o/r","update_to_version":"9.9.9"}"#,
    )
    .unwrap();
    let o = patchhunt(
        dir.path(),
        &[
            "--provider",
            "mock",
            "--mock-script",
            script.to_str().unwrap(),
            "--dataset",
            ds.to_str().unwrap(),
            "locate",
            "CVE-2021-0001",
            "--repo",
            fx.path().to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("error [repo_miner]"), "{err}");
    assert!(err.contains("v1.1.0"), "{err}");
}

fn write_predictions(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
    let path = dir.join("predictions.ndjson");
    std::fs::write(&path, lines.join("\n")).unwrap();
    path
}

#[test]
fn eval_two_cve_macro_values() {
    let dir = tempfile::tempdir().unwrap();
    let preds = write_predictions(
        dir.path(),
        &[
            r#"{"cve_id":"CVE-2020-0001","predicted":["a"],"truth":["a","b"]}"#,
            r#"{"cve_id":"CVE-2020-0002","predicted":["c","d"],"truth":["c"]}"#,
        ],
    );
    let o = patchhunt(dir.path(), &["eval", preds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&dir.path().join("out/report.json"));
    let get = |k: &str| report[k].as_f64().unwrap();
    assert!((get("macro_precision") - 0.75).abs() < 1e-12);
    assert!((get("macro_recall") - 0.75).abs() < 1e-12);
    assert!((get("macro_f1") - 2.0 / 3.0).abs() < 1e-12);
    assert!(stdout(&o).contains("| All | 0.7500 | 0.7500 | 0.6667 |"), "{}", stdout(&o));
}

#[test]
fn eval_top1_scores_only_the_first_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let preds = write_predictions(
        dir.path(),
        &[r#"{"cve_id":"CVE-2020-0001","predicted":["x","a","b","c","d"],"truth":["a"]}"#],
    );
    let o = patchhunt(dir.path(), &["eval", preds.to_str().unwrap(), "--k", "1,5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let top1 = read_json(&dir.path().join("out/report.top1.json"));
    assert_eq!(top1["macro_precision"].as_f64(), Some(0.0));
    assert_eq!(top1["accuracy_count"].as_u64(), Some(0));
    let top5 = read_json(&dir.path().join("out/report.top5.json"));
    assert_eq!(top5["macro_precision"].as_f64(), Some(0.2));
    assert_eq!(top5["accuracy_count"].as_u64(), Some(1));
}

#[test]
fn eval_malformed_line_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let preds = write_predictions(
        dir.path(),
        &[r#"{"cve_id":"CVE-2020-0001","predicted":["a"],"truth":["a"]}"#, "", r#"{"cve_id": oops}"#],
    );
    let o = patchhunt(dir.path(), &["eval", preds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("eval_harness"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

/// Linear history where each release adds 2, 4 and 6 commits.
fn stats_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let repos = dir.join("repos");
    let fx = FixtureRepo::at(&repos.join("acme__lib"));
    fx.commit("init", &[("lib.c", "int v0;\n")]);
    fx.tag("v1.0.0");
    let mut n = 0;
    for (patch, count) in [(1, 2), (2, 4), (3, 6)] {
        for _ in 0..count {
            n += 1;
            fx.commit(&format!("change {n}"), &[("lib.c", &format!("int v{n};\n"))]);
        }
        fx.tag(&format!("v1.0.{patch}"));
    }
    let line = |id: &str, v: &str| {
        format!(r#"{{"cve_id":"{id}","description":"x","package_name":"acme/lib","update_to_version":"{v}"}}"#)
    };
    let ds = dir.join("ds.ndjson");
    std::fs::write(
        &ds,
        [
            line("CVE-2022-0001", "1.0.1"),
            line("CVE-2022-0002", "1.0.2"),
            line("CVE-2022-0003", "1.0.3"),
            line("CVE-2022-0004", "7.0.0"),
        ]
        .join("\n"),
    )
    .unwrap();
    (ds, repos)
}

#[test]
fn stats_over_fixture_repo_with_one_skip() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, repos) = stats_fixture(dir.path());
    let o = patchhunt(
        dir.path(),
        &["--provider", "replay", "stats", ds.to_str().unwrap(), "--repos-dir", repos.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = read_json(&dir.path().join("out/stats.json"));
    let counts: Vec<u64> = out["counts"].as_array().unwrap().iter().map(|c| c["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, vec![2, 4, 6]);
    assert_eq!(out["stats"]["mean"].as_f64(), Some(4.0));
    assert_eq!(out["stats"]["median"].as_f64(), Some(4.0));
    assert_eq!(out["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(out["skipped"][0]["cve_id"], "CVE-2022-0004");
    assert!(stdout(&o).contains("skipped: 1"), "{}", stdout(&o));
}

#[test]
fn stats_on_empty_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("empty.ndjson");
    std::fs::write(&ds, "").unwrap();
    let o = patchhunt(dir.path(), &["stats", ds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn cache_inspect_and_clear() {
    let dir = tempfile::tempdir().unwrap();
    let llm = dir.path().join("cache/llm");
    std::fs::create_dir_all(&llm).unwrap();
    std::fs::write(llm.join("a.json"), "{}").unwrap();
    let o = patchhunt(dir.path(), &["cache", "inspect"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l.trim_start().starts_with("llm") && l.contains(" 1 files")), "{}", stdout(&o));

    let o = patchhunt(dir.path(), &["cache", "clear", "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    let o = patchhunt(dir.path(), &["cache", "clear", "llm"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!llm.join("a.json").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mp = MiniProject::create(&dir.path().join("fx"));
    let config = dir.path().join("patchhunt.toml");
    std::fs::write(
        &config,
        format!(
            "provider = \"mock\"\nmock_script = {:?}\ndataset = {:?}\nbatch_size = 5\nrounds = 4\n",
            mp.script.to_str().unwrap(),
            mp.dataset.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = patchhunt(
        dir.path(),
        &["--config", config.to_str().unwrap(), "--rounds", "3", "locate", MINI_CVE, "--repo", mp.repo.path().to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest = read_json(&dir.path().join("out").join(MINI_CVE).join("manifest.json"));
    assert_eq!(manifest["config"]["rounds"].as_u64(), Some(3));
    assert_eq!(manifest["config"]["batch_size"].as_u64(), Some(5));
    assert_eq!(manifest["config"]["provider"], "mock");
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "batch_size = 1\n").unwrap();
    let o = patchhunt(dir.path(), &["--config", config.to_str().unwrap(), "cache", "inspect"]);
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&config, "no_such_key = 3\n").unwrap();
    let o = patchhunt(dir.path(), &["--config", config.to_str().unwrap(), "cache", "inspect"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));
}
