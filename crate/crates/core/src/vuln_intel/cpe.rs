//! CPE 2.3 formatted-string binding.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CpeError {
    #[error("unsupported CPE binding (only cpe:2.3 formatted strings): {0}")]
    UnsupportedBinding(String),
    #[error("CPE has {found} components, expected 13: {uri}")]
    WrongArity { uri: String, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpe {
    pub part: String,
    pub vendor: String,
    pub product: String,
    /// `None` for the `*` and `-` wildcards.
    pub version: Option<String>,
}

/// Parse a `cpe:2.3:` formatted string. Backslash-escaped colons stay inside
/// their component and the escapes are removed.
pub fn parse_cpe(uri: &str) -> Result<Cpe, CpeError> {
    if !uri.starts_with("cpe:2.3:") {
        return Err(CpeError::UnsupportedBinding(uri.to_string()));
    }
    let mut parts = Vec::with_capacity(13);
    let mut cur = String::new();
    let mut chars = uri.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                if let Some(next) = chars.next() {
                    cur.push(next);
                }
            }
            ':' => parts.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    parts.push(cur);
    if parts.len() != 13 {
        return Err(CpeError::WrongArity {
            uri: uri.to_string(),
            found: parts.len(),
        });
    }
    let version = match parts[5].as_str() {
        "*" | "-" | "" => None,
        v => Some(v.to_string()),
    };
    Ok(Cpe {
        part: parts[2].clone(),
        vendor: parts[3].clone(),
        product: parts[4].clone(),
        version,
    })
}
