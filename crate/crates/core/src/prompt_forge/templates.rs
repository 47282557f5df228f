use std::path::Path;

/// Editable prompt texts. Placeholders are written as `{NAME}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub question: String,
    pub vuln_info: String,
    pub commit_info: String,
    pub guidance: String,
    pub example: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            question: include_str!("../../templates/question.txt").to_string(),
            vuln_info: include_str!("../../templates/vuln_info.txt").to_string(),
            commit_info: include_str!("../../templates/commit_info.txt").to_string(),
            guidance: include_str!("../../templates/guidance.txt").to_string(),
            example: include_str!("../../templates/example.txt").to_string(),
        }
    }
}

impl TemplateSet {
    /// Load `question.txt`, `vuln_info.txt`, `commit_info.txt`,
    /// `guidance.txt` and `example.txt` from `dir`; missing files keep the
    /// built-in text.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (name, slot) in [
            ("question.txt", &mut set.question),
            ("vuln_info.txt", &mut set.vuln_info),
            ("commit_info.txt", &mut set.commit_info),
            ("guidance.txt", &mut set.guidance),
            ("example.txt", &mut set.example),
        ] {
            match std::fs::read_to_string(dir.join(name)) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(set)
    }
}

/// Single-pass placeholder substitution: substituted values are never
/// rescanned, so text containing `{NAME}` passes through verbatim.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
