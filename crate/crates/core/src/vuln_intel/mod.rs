//! Vulnerability records: dataset loading, database fetches, and resolution of
//! the affected repository and fixed version.

mod cpe;
mod fetch;
mod hints;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use cpe::{parse_cpe, Cpe, CpeError};
pub use fetch::{FetchConfig, RetryPolicy, VulnClient, VulnSource, DEFAULT_NVD_BASE_URL, DEFAULT_OSV_BASE_URL};
pub use hints::{extract_version_hints, llm_extract_version_hints, version_extraction_prompt};

static CVE_ID_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^CVE-[0-9]{4}-[0-9]{4,}$").unwrap());

#[derive(Debug, thiserror::Error)]
pub enum VulnError {
    #[error("invalid CVE identifier {0:?}")]
    InvalidCveId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid version hint: {0}")]
    InvalidHint(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("every line of {path} failed validation ({} errors, first at line {})", .errors.len(), .errors[0].line)]
    AllLinesInvalid { path: PathBuf, errors: Vec<LineError> },
    #[error("{cve_id} not found in {source_name}")]
    NotFound { cve_id: String, source_name: String },
    #[error("fetch of {url} failed (status {status:?}): {message}")]
    Fetch {
        url: String,
        status: Option<u16>,
        message: String,
    },
    #[error("malformed response from {source_name}: {message}")]
    Parse { source_name: String, message: String },
    #[error("no <answer> tag in model response")]
    NoAnswerTag,
    #[error("model returned an empty <answer> block")]
    EmptyAnswer,
    #[error(transparent)]
    Gateway(#[from] crate::llm_gateway::GatewayError),
    #[error("source {0} requires a configured base URL")]
    MissingBaseUrl(&'static str),
}

/// Upper-cased, validated CVE identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CveId(String);

impl CveId {
    pub fn parse(raw: &str) -> Result<Self, VulnError> {
        let trimmed = raw.trim();
        if CVE_ID_RE.is_match(trimmed) {
            Ok(Self(trimmed.to_ascii_uppercase()))
        } else {
            Err(VulnError::InvalidCveId(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for CveId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CveId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        CveId::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// An affected-platform entry. Datasets may carry the bare CPE 2.3 string;
/// database ingestion also keeps the upper version bound when one is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CpeEntry {
    Uri(String),
    Match {
        criteria: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        version_end_excluding: Option<String>,
    },
}

impl CpeEntry {
    pub fn uri(&self) -> &str {
        match self {
            CpeEntry::Uri(u) => u,
            CpeEntry::Match { criteria, .. } => criteria,
        }
    }

    pub fn version_end_excluding(&self) -> Option<&str> {
        match self {
            CpeEntry::Uri(_) => None,
            CpeEntry::Match {
                version_end_excluding, ..
            } => version_end_excluding.as_deref(),
        }
    }
}

/// One vulnerability's identity, description and structured database fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct VulnRecord {
    pub cve_id: CveId,
    pub description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cvss: Option<f64>,
    pub cpes: Vec<CpeEntry>,
    pub references: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_urls: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub package_name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub update_to_version: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    cve_id: Option<String>,
    description: Option<String>,
    #[serde(default)]
    cvss: Option<f64>,
    #[serde(default)]
    cpes: Vec<CpeEntry>,
    #[serde(default)]
    references: Vec<String>,
    #[serde(default)]
    patch_urls: Option<Vec<String>>,
    #[serde(default)]
    package_name: Option<String>,
    #[serde(default)]
    update_to_version: Option<String>,
}

impl TryFrom<RawRecord> for VulnRecord {
    type Error = VulnError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let cve_id = raw
            .cve_id
            .ok_or_else(|| VulnError::InvalidRecord("missing cve_id".into()))?;
        let cve_id = CveId::parse(&cve_id)?;
        let description = raw.description.unwrap_or_default();
        if description.trim().is_empty() {
            return Err(VulnError::InvalidRecord(format!("{cve_id}: empty description")));
        }
        if let Some(score) = raw.cvss {
            if !(0.0..=10.0).contains(&score) {
                return Err(VulnError::InvalidRecord(format!("{cve_id}: cvss {score} outside [0, 10]")));
            }
        }
        let non_blank = |v: Option<String>| v.map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        Ok(VulnRecord {
            cve_id,
            description,
            cvss: raw.cvss,
            cpes: raw.cpes,
            references: raw.references,
            patch_urls: raw.patch_urls,
            package_name: non_blank(raw.package_name),
            update_to_version: non_blank(raw.update_to_version),
        })
    }
}

impl VulnRecord {
    /// Minimal record with only the required fields set.
    pub fn new(cve_id: CveId, description: impl Into<String>) -> Self {
        Self {
            cve_id,
            description: description.into(),
            cvss: None,
            cpes: Vec::new(),
            references: Vec::new(),
            patch_urls: None,
            package_name: None,
            update_to_version: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintSource {
    StructuredField,
    Cpe,
    LlmExtraction,
}

/// A (repository, fixed version) pair and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VersionHint {
    pub repo: String,
    pub fixed_version: String,
    pub source: HintSource,
}

impl VersionHint {
    pub fn new(repo: impl Into<String>, fixed_version: impl Into<String>, source: HintSource) -> Result<Self, VulnError> {
        let fixed_version = fixed_version.into().trim().to_string();
        if fixed_version.is_empty() || !fixed_version.chars().any(|c| c.is_ascii_digit()) {
            return Err(VulnError::InvalidHint(format!(
                "fixed version {fixed_version:?} contains no digit"
            )));
        }
        Ok(Self {
            repo: repo.into().trim().to_string(),
            fixed_version,
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Default)]
pub struct DatasetLoad {
    pub records: Vec<VulnRecord>,
    pub errors: Vec<LineError>,
}

/// Load an NDJSON dataset. Blank lines are skipped; invalid lines are
/// collected with their 1-based line numbers.
pub fn load_dataset(path: &Path) -> Result<DatasetLoad, VulnError> {
    let text = std::fs::read_to_string(path).map_err(|source| VulnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let out = parse_dataset(&text);
    if out.records.is_empty() && !out.errors.is_empty() {
        return Err(VulnError::AllLinesInvalid {
            path: path.to_path_buf(),
            errors: out.errors,
        });
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> DatasetLoad {
    let mut out = DatasetLoad::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<VulnRecord>(line) {
            Ok(rec) => out.records.push(rec),
            Err(e) => out.errors.push(LineError {
                line: idx + 1,
                message: e.to_string(),
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cve_id_is_uppercased() {
        let id = CveId::parse("cve-2020-5236").unwrap();
        assert_eq!(id.as_str(), "CVE-2020-5236");
        assert!(CveId::parse("CVE-20-1").is_err());
        assert!(CveId::parse("CVE-2021-123").is_err());
        assert!(CveId::parse("CVE-2021-1234567").is_ok());
    }

    #[test]
    fn single_line_dataset() {
        let d = parse_dataset(r#"{"cve_id":"CVE-2020-5236","description":"..."}"#);
        assert_eq!(d.records.len(), 1);
        assert!(d.errors.is_empty());
    }

    #[test]
    fn empty_file_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.ndjson");
        std::fs::write(&p, "").unwrap();
        let d = load_dataset(&p).unwrap();
        assert!(d.records.is_empty());
        assert!(d.errors.is_empty());
    }

    #[test]
    fn middle_line_missing_cve_id() {
        let text = concat!(
            r#"{"cve_id":"CVE-2020-0001","description":"a"}"#,
            "\n",
            r#"{"description":"b"}"#,
            "\n",
            r#"{"cve_id":"CVE-2020-0003","description":"c","unknown_key":1}"#,
            "\n"
        );
        let d = parse_dataset(text);
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.errors.len(), 1);
        assert_eq!(d.errors[0].line, 2);
    }

    #[test]
    fn all_invalid_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ndjson");
        std::fs::write(&p, "{\"cve_id\":\"nope\",\"description\":\"x\"}\nnot json\n").unwrap();
        match load_dataset(&p) {
            Err(VulnError::AllLinesInvalid { errors, .. }) => assert_eq!(errors.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.ndjson")),
            Err(VulnError::Io { .. })
        ));
    }

    #[test]
    fn hint_requires_digit() {
        assert!(VersionHint::new("foo", "unknown", HintSource::LlmExtraction).is_err());
        assert!(VersionHint::new("foo", "", HintSource::LlmExtraction).is_err());
        assert!(VersionHint::new("foo", "v2", HintSource::LlmExtraction).is_ok());
    }

    #[test]
    fn cpe_entry_accepts_both_shapes() {
        let d = parse_dataset(
            r#"{"cve_id":"CVE-2020-5236","description":"d","cpes":["cpe:2.3:a:x:y:1.0:*:*:*:*:*:*:*",{"criteria":"cpe:2.3:a:x:y:*:*:*:*:*:*:*:*","version_end_excluding":"1.1"}]}"#,
        );
        let rec = &d.records[0];
        assert_eq!(rec.cpes.len(), 2);
        assert_eq!(rec.cpes[1].version_end_excluding(), Some("1.1"));
        let json = serde_json::to_string(rec).unwrap();
        let back: VulnRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, rec);
    }
}
