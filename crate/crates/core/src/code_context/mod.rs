//! Enclosing-function extraction for modified lines, per language.

mod extract;
mod language;

use serde::{Deserialize, Serialize};

pub use extract::{commit_contexts, commit_contexts_with, enclosing_functions, fallback_contexts, CommitContexts};
pub use language::{detect_language, Language};

pub const FALLBACK_RADIUS: usize = 10;
pub const DEFAULT_MAX_CONTEXTS: usize = 20;
pub const MAX_FILE_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextOrigin {
    Parsed,
    WindowFallback,
}

/// A function (or a line window) that contains modified lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionContext {
    pub file: String,
    pub language: Language,
    /// Signature text; empty for window fallbacks.
    pub declaration: String,
    pub body: String,
    /// 1-based inclusive line span.
    pub span: (usize, usize),
    pub origin: ContextOrigin,
    /// Modified lines covered by this context, ascending.
    pub hit_lines: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("no grammar for language {0:?}")]
    UnsupportedLanguage(Language),
    #[error("no modified lines given")]
    NoLines,
    #[error("line {line} outside file of {total} lines")]
    LineOutOfRange { line: usize, total: usize },
    #[error("source could not be parsed as {0:?}")]
    ParseFailure(Language),
}
