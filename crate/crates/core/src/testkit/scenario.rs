use std::path::{Path, PathBuf};

use super::FixtureRepo;

pub const MINI_CVE: &str = "CVE-2021-41117";
pub const VULNERABLE_FUNCTION: &str = "parse_header";

const PARSER_V1: &str = r#"#include <string.h>
#include "parser.h"

int parse_header(const char *buf, size_t len, struct header *out)
{
    size_t n = (unsigned char)buf[0];
    memcpy(out->name, buf + 1, n);
    out->name_len = n;
    return (int)(n + 1);
}

int parse_body(const char *buf, size_t len, struct body *out)
{
    out->data = buf;
    out->len = len;
    return 0;
}
"#;

const PARSER_FIXED: &str = r#"#include <string.h>
#include "parser.h"

int parse_header(const char *buf, size_t len, struct header *out)
{
    if (len == 0)
        return -1;
    size_t n = (unsigned char)buf[0];
    if (n + 1 > len || n > sizeof(out->name))
        return -1;
    memcpy(out->name, buf + 1, n);
    out->name_len = n;
    return (int)(n + 1);
}

int parse_body(const char *buf, size_t len, struct body *out)
{
    out->data = buf;
    out->len = len;
    return 0;
}
"#;

/// A small C project with two maintained release lines. One
/// out-of-bounds fix lands on 1.2 and is cherry-picked to 1.1; eight other
/// commits are unrelated. Twelve commits in total.
pub struct MiniProject {
    pub repo: FixtureRepo,
    /// The fix as first committed, on the 1.2 line.
    pub fix: String,
    /// Its cherry-pick on the 1.1 line.
    pub twin: String,
    /// Dataset with the CVE record (two CPE ranges).
    pub dataset: PathBuf,
    /// Mock script that always names `fix`.
    pub script: PathBuf,
}

impl MiniProject {
    pub fn create(root: &Path) -> Self {
        std::fs::create_dir_all(root).expect("scenario root");
        let repo = FixtureRepo::at(&root.join("miniparse"));
        repo.commit(
            "Initial import",
            &[
                ("src/parser.c", PARSER_V1),
                ("src/parser.h", "struct header { char name[64]; size_t name_len; };\nstruct body { const char *data; size_t len; };\n"),
                ("src/util.c", "int clamp(int v, int lo, int hi)\n{\n    return v < lo ? lo : v > hi ? hi : v;\n}\n"),
            ],
        );
        repo.commit("Add configuration loader", &[("src/config.c", "int load_config(const char *path)\n{\n    return path ? 0 : -1;\n}\n")]);
        repo.tag("v1.1.0");
        repo.commit("Refactor utility helpers", &[("src/util.c", "int clamp(int v, int lo, int hi)\n{\n    if (v < lo)\n        return lo;\n    return v > hi ? hi : v;\n}\n")]);
        repo.commit("Add logging", &[("src/log.c", "void log_line(const char *s)\n{\n    (void)s;\n}\n")]);
        repo.tag("v1.2.0");

        repo.branch_from("release-1.1", "v1.1.0");
        repo.commit("Tidy configuration defaults", &[("src/config.c", "int load_config(const char *path)\n{\n    return path != 0 ? 0 : -1;\n}\n")]);
        repo.tag("v1.1.1");
        repo.commit("Document build flags", &[("BUILDING", "cc -O2 src/*.c\n")]);

        repo.branch_from("release-1.2", "v1.2.0");
        repo.commit("Update contributor list", &[("AUTHORS", "Fixture\n")]);
        repo.commit("Speed up log formatting", &[("src/log.c", "void log_line(const char *s)\n{\n    (void)s;\n    return;\n}\n")]);
        let fix = repo.commit(
            "Fix out-of-bounds read in parse_header\n\nThe header length byte was trusted without checking it against the\ninput size and the destination buffer.",
            &[("src/parser.c", PARSER_FIXED)],
        );
        repo.commit("Release 1.2.1", &[("VERSION", "1.2.1\n")]);
        repo.tag("v1.2.1");

        repo.checkout("release-1.1");
        let twin = repo.cherry_pick(&fix);
        repo.commit("Release 1.1.2", &[("VERSION", "1.1.2\n")]);
        repo.tag("v1.1.2");
        repo.checkout("main");

        let record = serde_json::json!({
            "cve_id": MINI_CVE,
            "description": "An out-of-bounds read in the header parser of miniparse before 1.1.2 and 1.2.x before 1.2.1 allows a crafted message to read past the input buffer.",
            "cvss": 7.5,
            "cpes": [
                {"criteria": "cpe:2.3:a:acme:miniparse:*:*:*:*:*:*:*:*", "version_end_excluding": "1.1.2"},
                {"criteria": "cpe:2.3:a:acme:miniparse:*:*:*:*:*:*:*:*", "version_end_excluding": "1.2.1"}
            ],
            "references": ["https://example.org/miniparse/advisories/7"]
        });
        let dataset = root.join("dataset.ndjson");
        std::fs::write(&dataset, format!("{record}\n")).expect("write dataset");

        let line = serde_json::json!({
            "match": VULNERABLE_FUNCTION,
            "response": format!("The commit bounds the header length in {VULNERABLE_FUNCTION}.\n<answer>{}</answer>", &fix[..7]),
        });
        let script = root.join("mock_script.ndjson");
        std::fs::write(&script, format!("{line}\n").repeat(10)).expect("write script");

        Self {
            repo,
            fix,
            twin,
            dataset,
            script,
        }
    }
}
