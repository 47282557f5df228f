//! Run configuration: built-in defaults, overlaid by a flat key-value config
//! file, overlaid by command-line flags. The model API key is read only from
//! the environment and never stored here.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::llm_gateway::{DEFAULT_MAX_IN_FLIGHT, DEFAULT_TEMPERATURE};
use crate::prompt_forge::DEFAULT_TOKEN_BUDGET;
use crate::repo_miner::DEFAULT_MAX_CANDIDATES;
use crate::vote_engine::{DEFAULT_BATCH_SIZE, DEFAULT_ROUNDS};
use crate::vuln_intel::{DEFAULT_NVD_BASE_URL, DEFAULT_OSV_BASE_URL};

pub const API_KEY_ENV: &str = "PATCHHUNT_API_KEY";
pub const DEFAULT_LLM_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_MODEL_ID: &str = "gpt-4o-mini";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Live,
    Mock,
    Replay,
}

impl FromStr for Provider {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Self::Live),
            "mock" => Ok(Self::Mock),
            "replay" => Ok(Self::Replay),
            _ => Err(ConfigError::Invalid(format!("unknown provider {s:?} (live, mock, replay)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordSource {
    Nvd,
    Osv,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub batch_size: usize,
    pub rounds: u32,
    pub max_candidates: usize,
    pub token_budget: usize,
    pub max_contexts: usize,
    pub model_id: String,
    pub temperature: f64,
    pub seed: u64,
    /// Shuffle batch order per round, keyed by `seed`.
    pub shuffle: bool,
    pub provider: Provider,
    pub llm_base_url: String,
    pub max_in_flight: usize,
    pub record_source: RecordSource,
    pub nvd_base_url: String,
    pub osv_base_url: String,
    pub template_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub literal_algorithm1: bool,
    pub no_cache: bool,
    pub refresh: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cache_dir: PathBuf::from(".patchhunt/cache"),
            out_dir: PathBuf::from(".patchhunt/out"),
            batch_size: DEFAULT_BATCH_SIZE,
            rounds: DEFAULT_ROUNDS,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            token_budget: DEFAULT_TOKEN_BUDGET,
            max_contexts: crate::code_context::DEFAULT_MAX_CONTEXTS,
            model_id: DEFAULT_MODEL_ID.into(),
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            shuffle: false,
            provider: Provider::Live,
            llm_base_url: DEFAULT_LLM_BASE_URL.into(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            record_source: RecordSource::Nvd,
            nvd_base_url: DEFAULT_NVD_BASE_URL.into(),
            osv_base_url: DEFAULT_OSV_BASE_URL.into(),
            template_dir: None,
            mock_script: None,
            dataset: None,
            jobs: None,
            literal_algorithm1: false,
            no_cache: false,
            refresh: false,
        }
    }
}

/// A sparse set of overrides, as read from a config file or collected from
/// flags. Unknown keys in a file are rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverlay {
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub rounds: Option<u32>,
    pub max_candidates: Option<usize>,
    pub token_budget: Option<usize>,
    pub max_contexts: Option<usize>,
    pub model_id: Option<String>,
    pub temperature: Option<f64>,
    pub seed: Option<u64>,
    pub shuffle: Option<bool>,
    pub provider: Option<Provider>,
    pub llm_base_url: Option<String>,
    pub max_in_flight: Option<usize>,
    pub record_source: Option<RecordSource>,
    pub nvd_base_url: Option<String>,
    pub osv_base_url: Option<String>,
    pub template_dir: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub literal_algorithm1: Option<bool>,
    pub no_cache: Option<bool>,
    pub refresh: Option<bool>,
}

macro_rules! overlay {
    ($cfg:ident, $o:ident; $($plain:ident),*; $($opt:ident),*) => {
        $(if let Some(v) = $o.$plain.clone() { $cfg.$plain = v; })*
        $(if let Some(v) = $o.$opt.clone() { $cfg.$opt = Some(v); })*
    };
}

impl RunConfig {
    pub fn apply(&mut self, o: &ConfigOverlay) {
        overlay!(self, o;
            cache_dir, out_dir, batch_size, rounds, max_candidates, token_budget, max_contexts, model_id,
            temperature, seed, shuffle, provider, llm_base_url, max_in_flight, record_source, nvd_base_url,
            osv_base_url, literal_algorithm1, no_cache, refresh;
            template_dir, mock_script, dataset, jobs);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.rounds < 1 {
            return bad("rounds must be at least 1");
        }
        if self.max_candidates < 1 {
            return bad("max_candidates must be at least 1");
        }
        if self.token_budget < 1 {
            return bad("token_budget must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be at least 1");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be at least 1");
        }
        if self.provider == Provider::Mock && self.mock_script.is_none() {
            return bad("provider mock needs mock_script");
        }
        Ok(())
    }

    pub fn shuffle_seed(&self) -> Option<u64> {
        self.shuffle.then_some(self.seed)
    }
}
