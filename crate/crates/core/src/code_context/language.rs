use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    C,
    Cpp,
    Java,
    Go,
    Python,
    Javascript,
    Unknown,
}

impl Language {
    pub fn grammar(self) -> Option<tree_sitter::Language> {
        Some(match self {
            Language::C => tree_sitter_c::LANGUAGE.into(),
            Language::Cpp => tree_sitter_cpp::LANGUAGE.into(),
            Language::Java => tree_sitter_java::LANGUAGE.into(),
            Language::Go => tree_sitter_go::LANGUAGE.into(),
            Language::Python => tree_sitter_python::LANGUAGE.into(),
            Language::Javascript => tree_sitter_javascript::LANGUAGE.into(),
            Language::Unknown => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Java => "java",
            Language::Go => "go",
            Language::Python => "python",
            Language::Javascript => "javascript",
            Language::Unknown => "unknown",
        }
    }
}

fn extension(path: &str) -> Option<String> {
    Path::new(path).extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

fn stem(path: &str) -> Option<&str> {
    Path::new(path).file_stem().and_then(|s| s.to_str())
}

/// Language from the file extension. A `.h` header is C when a `.c` file with
/// the same stem is among `siblings` (the other files of the commit), C++
/// otherwise.
pub fn detect_language(path: &str, siblings: &[String]) -> Language {
    match extension(path).as_deref() {
        Some("c") => Language::C,
        Some("cc" | "cpp" | "cxx" | "hpp" | "hh" | "hxx") => Language::Cpp,
        Some("h") => {
            let own = stem(path);
            let has_c_sibling = siblings
                .iter()
                .any(|s| extension(s).as_deref() == Some("c") && stem(s) == own);
            if has_c_sibling {
                Language::C
            } else {
                Language::Cpp
            }
        }
        Some("java") => Language::Java,
        Some("go") => Language::Go,
        Some("py") => Language::Python,
        Some("js" | "mjs" | "cjs" | "jsx") => Language::Javascript,
        _ => Language::Unknown,
    }
}
