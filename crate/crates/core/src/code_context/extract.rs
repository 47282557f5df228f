use std::collections::{BTreeMap, BTreeSet};

use tree_sitter::{Node, Parser};

use super::{
    detect_language, ContextError, ContextOrigin, FunctionContext, Language, FALLBACK_RADIUS, MAX_FILE_BYTES,
};
use crate::par::map_ordered;
use crate::repo_miner::{CommitRecord, Repo};

/// Node kinds that define a function, and whether the kind is a lambda form
/// that only counts when its body is a block.
fn function_kind(language: Language, kind: &str) -> Option<bool> {
    let (defs, lambdas): (&[&str], &[&str]) = match language {
        Language::C => (&["function_definition"], &[]),
        Language::Cpp => (&["function_definition"], &["lambda_expression"]),
        Language::Java => (
            &["method_declaration", "constructor_declaration", "compact_constructor_declaration"],
            &["lambda_expression"],
        ),
        Language::Go => (&["function_declaration", "method_declaration", "func_literal"], &[]),
        Language::Python => (&["function_definition"], &[]),
        Language::Javascript => (
            &[
                "function_declaration",
                "function_expression",
                "function",
                "generator_function_declaration",
                "generator_function",
                "method_definition",
            ],
            &["arrow_function"],
        ),
        Language::Unknown => (&[], &[]),
    };
    if defs.contains(&kind) {
        Some(false)
    } else if lambdas.contains(&kind) {
        Some(true)
    } else {
        None
    }
}

const BLOCK_KINDS: [&str; 4] = ["block", "statement_block", "compound_statement", "constructor_body"];

struct FunctionNode {
    span: (usize, usize),
    start_byte: usize,
    body_start: usize,
    end_byte: usize,
}

fn node_span(node: &Node) -> (usize, usize) {
    let start = node.start_position().row + 1;
    let end_pos = node.end_position();
    let mut end = end_pos.row + 1;
    if end_pos.column == 0 && end > start {
        end -= 1;
    }
    (start, end)
}

fn collect_functions(root: Node, language: Language, out: &mut Vec<FunctionNode>) {
    let mut cursor = root.walk();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if let Some(is_lambda) = function_kind(language, node.kind()) {
            if let Some(body) = node.child_by_field_name("body") {
                let block_ok = !is_lambda || BLOCK_KINDS.contains(&body.kind());
                if block_ok && !node.has_error() {
                    out.push(FunctionNode {
                        span: node_span(&node),
                        start_byte: node.start_byte(),
                        body_start: body.start_byte(),
                        end_byte: node.end_byte(),
                    });
                }
            }
        }
        stack.extend(node.children(&mut cursor));
    }
}

fn line_count(source: &str) -> usize {
    source.lines().count()
}

fn window(source: &str, file: &str, language: Language, line: usize, total: usize) -> FunctionContext {
    let start = line.saturating_sub(FALLBACK_RADIUS).max(1);
    let end = (line + FALLBACK_RADIUS).min(total);
    let body = source
        .lines()
        .skip(start - 1)
        .take(end + 1 - start)
        .collect::<Vec<_>>()
        .join("\n");
    FunctionContext {
        file: file.to_string(),
        language,
        declaration: String::new(),
        body,
        span: (start, end),
        origin: ContextOrigin::WindowFallback,
        hit_lines: vec![line],
    }
}

fn validate_lines(source: &str, lines: &BTreeSet<usize>) -> Result<usize, ContextError> {
    if lines.is_empty() {
        return Err(ContextError::NoLines);
    }
    let total = line_count(source);
    if let Some(&bad) = lines.iter().find(|&&l| l == 0 || l > total) {
        return Err(ContextError::LineOutOfRange { line: bad, total });
    }
    Ok(total)
}

fn merge_into(map: &mut BTreeMap<((usize, usize), u8), FunctionContext>, ctx: FunctionContext) {
    let key = (ctx.span, ctx.origin as u8);
    match map.get_mut(&key) {
        Some(existing) => {
            existing.hit_lines.extend(ctx.hit_lines);
            existing.hit_lines.sort_unstable();
            existing.hit_lines.dedup();
        }
        None => {
            map.insert(key, ctx);
        }
    }
}

/// One ±10-line window per modified line, deduplicated by span.
pub fn fallback_contexts(
    source: &str,
    file: &str,
    language: Language,
    lines: &BTreeSet<usize>,
) -> Result<Vec<FunctionContext>, ContextError> {
    let total = validate_lines(source, lines)?;
    let mut by_span = BTreeMap::new();
    for &line in lines {
        merge_into(&mut by_span, window(source, file, language, line, total));
    }
    Ok(by_span.into_values().collect())
}

/// For each modified line, the innermost function definition containing it;
/// lines outside any function get a line-window fallback. Results are
/// deduplicated by span and ordered by position.
pub fn enclosing_functions(
    source: &str,
    language: Language,
    lines: &BTreeSet<usize>,
) -> Result<Vec<FunctionContext>, ContextError> {
    enclosing_functions_in(source, "", language, lines)
}

pub(crate) fn enclosing_functions_in(
    source: &str,
    file: &str,
    language: Language,
    lines: &BTreeSet<usize>,
) -> Result<Vec<FunctionContext>, ContextError> {
    let grammar = language.grammar().ok_or(ContextError::UnsupportedLanguage(language))?;
    let total = validate_lines(source, lines)?;
    let mut parser = Parser::new();
    parser
        .set_language(&grammar)
        .map_err(|_| ContextError::ParseFailure(language))?;
    let tree = parser.parse(source, None).ok_or(ContextError::ParseFailure(language))?;
    let root = tree.root_node();
    if root.kind() == "ERROR" {
        return Err(ContextError::ParseFailure(language));
    }
    let mut functions = Vec::new();
    collect_functions(root, language, &mut functions);

    let mut by_span = BTreeMap::new();
    for &line in lines {
        let innermost = functions
            .iter()
            .filter(|f| f.span.0 <= line && line <= f.span.1)
            .min_by_key(|f| (f.end_byte - f.start_byte, std::cmp::Reverse(f.start_byte)));
        let ctx = match innermost {
            Some(f) => FunctionContext {
                file: file.to_string(),
                language,
                declaration: source[f.start_byte..f.body_start].trim_end().to_string(),
                body: source[f.start_byte..f.end_byte].to_string(),
                span: f.span,
                origin: ContextOrigin::Parsed,
                hit_lines: vec![line],
            },
            None => window(source, file, language, line, total),
        };
        merge_into(&mut by_span, ctx);
    }
    Ok(by_span.into_values().collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitContexts {
    pub contexts: Vec<FunctionContext>,
    /// Files skipped and why.
    pub notices: Vec<String>,
}

fn is_binary(bytes: &[u8]) -> bool {
    bytes.iter().take(8000).any(|&b| b == 0)
}

fn file_contexts<F>(commit: &CommitRecord, file: &str, read: &F) -> (Vec<FunctionContext>, Option<String>)
where
    F: Fn(&str, &str) -> Option<Vec<u8>>,
{
    let language = detect_language(file, &commit.files);
    if language == Language::Unknown {
        return (Vec::new(), Some(format!("{file}: unsupported language, skipped")));
    }
    let hunks: Vec<_> = commit.hunks.iter().filter(|h| h.file == file).collect();
    let (bytes, wanted): (Vec<u8>, BTreeSet<usize>) = match read(&commit.hash, file) {
        Some(post) => {
            let mut lines: BTreeSet<usize> = hunks.iter().flat_map(|h| h.added_lines.iter().map(|(n, _)| *n)).collect();
            for h in hunks.iter().filter(|h| h.new_len == 0 && !h.removed_lines.is_empty()) {
                lines.insert(h.new_start.max(1));
            }
            (post, lines)
        }
        None => {
            let parent = format!("{}^", commit.hash);
            match read(&parent, file) {
                Some(pre) => (
                    pre,
                    hunks.iter().flat_map(|h| h.removed_lines.iter().map(|(n, _)| *n)).collect(),
                ),
                None => return (Vec::new(), Some(format!("{file}: content unavailable, skipped"))),
            }
        }
    };
    if bytes.len() > MAX_FILE_BYTES {
        return (Vec::new(), Some(format!("{file}: larger than 1 MB, skipped")));
    }
    if is_binary(&bytes) {
        return (Vec::new(), Some(format!("{file}: binary, skipped")));
    }
    let source = String::from_utf8_lossy(&bytes);
    let total = line_count(&source);
    let wanted: BTreeSet<usize> = wanted.into_iter().map(|l| l.min(total)).filter(|&l| l >= 1).collect();
    if wanted.is_empty() {
        return (Vec::new(), None);
    }
    match enclosing_functions_in(&source, file, language, &wanted) {
        Ok(ctxs) => (ctxs, None),
        Err(e) => {
            let ctxs = fallback_contexts(&source, file, language, &wanted).unwrap_or_default();
            (ctxs, Some(format!("{file}: {e}; using line windows")))
        }
    }
}

/// Function contexts for every changed file of `commit`, read through
/// `read(rev, path)`. At most `max_contexts` are kept, ranked by how many
/// modified lines each covers.
pub fn commit_contexts_with<F>(commit: &CommitRecord, max_contexts: usize, read: F) -> CommitContexts
where
    F: Fn(&str, &str) -> Option<Vec<u8>> + Sync + Send,
{
    let per_file = map_ordered(&commit.files, true, |f| file_contexts(commit, f, &read));
    let mut out = CommitContexts::default();
    for (ctxs, notice) in per_file {
        out.contexts.extend(ctxs);
        out.notices.extend(notice);
    }
    // stable: ties keep file order then position
    out.contexts.sort_by_key(|c| std::cmp::Reverse(c.hit_lines.len()));
    if out.contexts.len() > max_contexts {
        out.notices.push(format!(
            "kept {max_contexts} of {} contexts by modified-line coverage",
            out.contexts.len()
        ));
        out.contexts.truncate(max_contexts);
    }
    out
}

pub fn commit_contexts(commit: &CommitRecord, repo: &Repo, max_contexts: usize) -> CommitContexts {
    commit_contexts_with(commit, max_contexts, |rev, path| {
        if let Some(size) = repo.file_size_at(rev, path) {
            if size as usize > MAX_FILE_BYTES {
                // avoid reading huge blobs; the size check downstream reports it
                return Some(vec![b' '; MAX_FILE_BYTES + 1]);
            }
        }
        repo.file_at(rev, path).ok().flatten()
    })
}
