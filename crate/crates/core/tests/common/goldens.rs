//! Function-extraction golden cases shared by the golden test and the
//! acceptance suite.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use patchhunt_core::code_context::{enclosing_functions, FunctionContext, Language};

pub struct Case {
    pub file: &'static str,
    pub language: Language,
    pub lines: &'static [usize],
}

pub const CASES: [Case; 6] = [
    Case { file: "buffer.c", language: Language::C, lines: &[4, 16, 27, 31] },
    Case { file: "matrix.cpp", language: Language::Cpp, lines: &[12, 18, 30] },
    Case { file: "Session.java", language: Language::Java, lines: &[7, 14, 24] },
    Case { file: "handler.go", language: Language::Go, lines: &[8, 17, 22, 28] },
    Case { file: "views.py", language: Language::Python, lines: &[4, 8, 19, 23] },
    Case { file: "router.js", language: Language::Javascript, lines: &[3, 8, 26, 28] },
];

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/code")
}

pub fn render(contexts: &[FunctionContext]) -> String {
    let mut s = String::new();
    for (i, c) in contexts.iter().enumerate() {
        let hits: Vec<String> = c.hit_lines.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "=== context {i}");
        let _ = writeln!(s, "span: {}-{}", c.span.0, c.span.1);
        let _ = writeln!(s, "origin: {:?}", c.origin);
        let _ = writeln!(s, "hit_lines: {}", hits.join(", "));
        let _ = writeln!(s, "--- declaration\n{}", c.declaration);
        let _ = writeln!(s, "--- body\n{}", c.body);
    }
    s
}

/// Extract every case and compare against its `.golden` file. With `update`
/// the goldens are rewritten instead.
pub fn check(case: &Case, update: bool) -> Result<(), String> {
    let src_path = dir().join(case.file);
    let golden_path = dir().join(format!("{}.golden", case.file));
    let source = std::fs::read_to_string(&src_path).map_err(|e| format!("{}: {e}", src_path.display()))?;
    let lines: BTreeSet<usize> = case.lines.iter().copied().collect();
    let contexts = enclosing_functions(&source, case.language, &lines).map_err(|e| e.to_string())?;
    let got = render(&contexts);
    if update {
        std::fs::write(&golden_path, &got).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let want = std::fs::read_to_string(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    if got == want {
        Ok(())
    } else {
        Err(format!("{} differs from its golden:\n{got}", case.file))
    }
}
