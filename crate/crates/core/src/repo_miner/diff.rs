//! Parser for the unified diffs produced by `git log -p`.

use serde::{Deserialize, Serialize};

/// One `@@` hunk. Starts are 1-based; lengths may be zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub file: String,
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub added_lines: Vec<(usize, String)>,
    pub removed_lines: Vec<(usize, String)>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ParsedDiff {
    pub files: Vec<String>,
    pub hunks: Vec<DiffHunk>,
}

fn parse_range(spec: &str) -> Option<(usize, usize)> {
    let (start, len) = match spec.split_once(',') {
        Some((s, l)) => (s.parse().ok()?, l.parse().ok()?),
        None => (spec.parse().ok()?, 1),
    };
    Some((start, len))
}

fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, _) = rest.split_once(" @@")?;
    let (os, ol) = parse_range(old)?;
    let (ns, nl) = parse_range(new)?;
    Some((os, ol, ns, nl))
}

fn header_path(line: &str, marker: &str) -> Option<String> {
    let rest = line.strip_prefix(marker)?;
    let rest = rest.trim_end_matches('\t');
    if rest == "/dev/null" {
        return None;
    }
    let rest = rest.strip_prefix("a/").or_else(|| rest.strip_prefix("b/")).unwrap_or(rest);
    Some(rest.to_string())
}

/// `diff --git a/<p> b/<p>` with renames disabled carries the same path twice.
fn git_header_path(line: &str) -> Option<String> {
    let rest = line.strip_prefix("diff --git ")?;
    if rest.len() >= 5 && (rest.len() - 5) % 2 == 0 {
        let half = (rest.len() - 5) / 2;
        if rest.is_char_boundary(2 + half) && rest.is_char_boundary(half + 3) {
            let a = &rest[2..2 + half];
            let b = rest.get(half + 5..)?;
            if a == b && rest.starts_with("a/") {
                return Some(a.to_string());
            }
        }
    }
    rest.rsplit_once(" b/").map(|(_, b)| b.to_string())
}

pub fn parse_unified_diff(text: &str) -> ParsedDiff {
    let mut out = ParsedDiff::default();
    let mut current_file: Option<String> = None;
    let mut hunk: Option<DiffHunk> = None;
    let (mut old_line, mut new_line, mut old_rem, mut new_rem) = (0usize, 0usize, 0usize, 0usize);

    let push_file = |out: &mut ParsedDiff, f: &str| {
        if !out.files.iter().any(|x| x == f) {
            out.files.push(f.to_string());
        }
    };

    for line in text.lines() {
        if let Some(h) = hunk.as_mut().filter(|_| old_rem > 0 || new_rem > 0) {
            match line.as_bytes().first() {
                Some(b'+') => {
                    h.added_lines.push((new_line, line[1..].to_string()));
                    new_line += 1;
                    new_rem = new_rem.saturating_sub(1);
                    continue;
                }
                Some(b'-') => {
                    h.removed_lines.push((old_line, line[1..].to_string()));
                    old_line += 1;
                    old_rem = old_rem.saturating_sub(1);
                    continue;
                }
                Some(b' ') | None => {
                    old_line += 1;
                    new_line += 1;
                    old_rem = old_rem.saturating_sub(1);
                    new_rem = new_rem.saturating_sub(1);
                    continue;
                }
                Some(b'\\') => continue,
                _ => {}
            }
        }
        if line.starts_with('\\') {
            continue;
        }
        if let Some(path) = git_header_path(line) {
            out.hunks.extend(hunk.take());
            push_file(&mut out, &path);
            current_file = Some(path);
            continue;
        }
        if line.starts_with("--- ") || line.starts_with("+++ ") {
            let marker = &line[..4];
            if let Some(p) = header_path(line, marker) {
                if current_file.as_deref() != Some(p.as_str()) {
                    push_file(&mut out, &p);
                    current_file = Some(p);
                }
            }
            continue;
        }
        if let Some((os, ol, ns, nl)) = parse_hunk_header(line) {
            out.hunks.extend(hunk.take());
            let file = current_file.clone().unwrap_or_default();
            hunk = Some(DiffHunk {
                file,
                old_start: os,
                old_len: ol,
                new_start: ns,
                new_len: nl,
                added_lines: Vec::new(),
                removed_lines: Vec::new(),
            });
            old_line = os;
            new_line = ns;
            old_rem = ol;
            new_rem = nl;
        }
    }
    out.hunks.extend(hunk);
    out
}
