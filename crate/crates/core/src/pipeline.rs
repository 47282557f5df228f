//! End-to-end runs: locate one CVE's patch commits, score predictions,
//! candidate-count statistics and cache housekeeping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::code_context::{commit_contexts, FunctionContext};
use crate::config::{ConfigError, Provider, RecordSource, RunConfig, API_KEY_ENV};
use crate::eval_harness::{
    candidate_stats, emit_report, load_predictions, score, CandidateStats, EvalError, EvalReport, ReportFormat,
    Reportable,
};
use crate::fsutil::{sha256_hex, write_atomic};
use crate::llm_gateway::{
    CacheMode, ChatBackend, Gateway, GatewayError, LiveBackend, ReplayBackend, ScriptedBackend,
};
use crate::par::{is_parallel, map_ordered};
use crate::prompt_forge::{PromptError, TemplateSet};
use crate::repo_miner::{
    acquire_repo, build_candidates, clone_dir_name, list_tags, resolve_ranges, CandidateOptions, CandidateSet,
    CommitRecord, Repo, RepoError,
};
use crate::result_expander::{build_search_db, expand, PatchResult};
use crate::vote_engine::{run_votes, LlmJudge, VoteError, VoteOptions, VoteTally};
use crate::vuln_intel::{
    extract_version_hints, llm_extract_version_hints, load_dataset, CveId, FetchConfig, VulnClient, VulnError,
    VulnRecord, VulnSource,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Vuln(#[from] VulnError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Vote(#[from] VoteError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// The pipeline stage the error came from.
    pub fn module(&self) -> &'static str {
        match self {
            PipelineError::Config(_) | PipelineError::Input(_) | PipelineError::Io { .. } => "cli",
            PipelineError::Vuln(_) => "vuln_intel",
            PipelineError::Repo(_) => "repo_miner",
            PipelineError::Gateway(_) | PipelineError::Vote(VoteError::Gateway(_)) => "llm_gateway",
            PipelineError::Vote(VoteError::Prompt(_)) => "prompt_forge",
            PipelineError::Vote(_) => "vote_engine",
            PipelineError::Eval(_) => "eval_harness",
        }
    }

    /// What the user can do about it.
    pub fn hint(&self) -> &'static str {
        let gateway_hint = |e: &GatewayError| match e {
            GatewayError::ReplayMiss(_) => "replay reads transcripts cached by an earlier live or mock run with the same model and templates",
            GatewayError::Script(_) => "check that the mock script has an entry for every prompt the run sends",
            GatewayError::Cache(..) => "check that the cache directory is writable",
            _ => "check the model endpoint and the API key in PATCHHUNT_API_KEY",
        };
        match self {
            PipelineError::Config(_) => "fix the flag or config-file value named above",
            PipelineError::Input(_) => "check the command-line arguments",
            PipelineError::Io { .. } => "check that the path exists and is writable",
            PipelineError::Vuln(VulnError::NotFound { .. }) => {
                "supply the record with --dataset, store it in the local cache, or run with --provider live"
            }
            PipelineError::Vuln(VulnError::Gateway(e)) => gateway_hint(e),
            PipelineError::Vuln(_) => "check the vulnerability record or the database endpoint",
            PipelineError::Repo(RepoError::NoTag { .. } | RepoError::AmbiguousTag { .. } | RepoError::NoHintMatched(_)) => {
                "compare the fixed version with the repository's tags listed above"
            }
            PipelineError::Repo(RepoError::Git { .. } | RepoError::NotARepository(_)) => {
                "check that --repo points to a reachable git repository; --refresh re-fetches a cached clone"
            }
            PipelineError::Repo(_) => "check the version hints against the repository history",
            PipelineError::Gateway(e) | PipelineError::Vote(VoteError::Gateway(e)) => gateway_hint(e),
            PipelineError::Vote(VoteError::Prompt(PromptError::BudgetTooSmall { .. })) => {
                "raise --token-budget or lower --batch-size"
            }
            PipelineError::Vote(_) => "check --batch-size and --rounds",
            PipelineError::Eval(_) => "check the predictions file",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), PipelineError> {
    write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn fetch_config(cfg: &RunConfig) -> FetchConfig {
    let mut fc = FetchConfig::new(&cfg.cache_dir);
    fc.nvd_base_url = Some(cfg.nvd_base_url.clone());
    fc.osv_base_url = Some(cfg.osv_base_url.clone());
    fc
}

/// Find the record in the dataset file, then the local cache, then (live
/// mode only) the configured vulnerability database.
pub fn load_record(cfg: &RunConfig, cve_id: &CveId) -> Result<VulnRecord, PipelineError> {
    if let Some(ds) = &cfg.dataset {
        let load = load_dataset(ds)?;
        for e in &load.errors {
            log::warn!("{}:{}: {}", ds.display(), e.line, e.message);
        }
        if let Some(r) = load.records.into_iter().find(|r| &r.cve_id == cve_id) {
            return Ok(r);
        }
    }
    let client = VulnClient::new(fetch_config(cfg))?;
    match client.fetch_record(cve_id, VulnSource::LocalCache) {
        Err(VulnError::NotFound { .. }) if cfg.provider == Provider::Live => {}
        other => return Ok(other?),
    }
    let source = match cfg.record_source {
        RecordSource::Nvd => VulnSource::Nvd,
        RecordSource::Osv => VulnSource::Osv,
    };
    Ok(client.fetch_record(cve_id, source)?)
}

pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, PipelineError> {
    let (backend, mode): (Box<dyn ChatBackend>, CacheMode) = match cfg.provider {
        Provider::Live => {
            let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            if key.is_none() {
                log::warn!("{API_KEY_ENV} is not set; sending requests without a key");
            }
            let backend = LiveBackend::new(&cfg.llm_base_url, &cfg.model_id, key, cfg.temperature)?;
            (Box::new(backend), CacheMode::ReadWrite)
        }
        Provider::Mock => {
            let path = cfg
                .mock_script
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("provider mock needs mock_script".into()))?;
            let backend = ScriptedBackend::load(path)?.with_model_id(&cfg.model_id);
            (Box::new(backend), CacheMode::WriteOnly)
        }
        Provider::Replay => (Box::new(ReplayBackend::new(&cfg.model_id)), CacheMode::ReadOnly),
    };
    let mut gateway = Gateway::new(backend).with_max_in_flight(cfg.max_in_flight);
    if !cfg.no_cache || cfg.provider == Provider::Replay {
        gateway = gateway.with_cache(&cfg.cache_dir, mode);
    }
    Ok(gateway)
}

fn templates(cfg: &RunConfig) -> Result<TemplateSet, PipelineError> {
    match &cfg.template_dir {
        Some(dir) => TemplateSet::load_dir(dir).map_err(io_err(dir)),
        None => Ok(TemplateSet::default()),
    }
}

fn concurrent(cfg: &RunConfig) -> bool {
    is_parallel() && cfg.jobs != Some(1)
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    cve_id: &'a str,
    repo: &'a str,
    repo_head: String,
    record_sha256: String,
    mock_script_sha256: Option<String>,
    config: &'a RunConfig,
}

#[derive(Debug, Clone)]
pub struct LocateOutcome {
    pub out_dir: PathBuf,
    pub result: PatchResult,
    pub tally: VoteTally,
    pub candidates: CandidateSet,
    pub summary: String,
}

/// Run the whole pipeline for one CVE and write its outputs under
/// `<out_dir>/<CVE-ID>/`. `repo_spec` is a local path or clone URL; without
/// it the repository named by the first version hint is used.
pub fn locate(cfg: &RunConfig, cve_id: &str, repo_spec: Option<&str>) -> Result<LocateOutcome, PipelineError> {
    cfg.validate()?;
    let cve = CveId::parse(cve_id)?;
    let record = load_record(cfg, &cve)?;
    let gateway = build_gateway(cfg)?;

    let mut hints = extract_version_hints(&record);
    if hints.is_empty() {
        log::info!("{cve}: no structured version data, asking the model");
        hints = llm_extract_version_hints(&record, &gateway)?;
    }
    let spec = match (repo_spec, hints.first()) {
        (Some(s), _) => s.to_string(),
        (None, Some(h)) => h.repo.clone(),
        (None, None) => return Err(RepoError::Precondition("no repository given and no version hint names one").into()),
    };
    let repo = acquire_repo(&spec, &cfg.cache_dir, cfg.refresh)?;
    let candidates = build_candidates(
        &cve,
        &hints,
        &repo,
        &CandidateOptions {
            max_candidates: cfg.max_candidates,
        },
    )?;
    log::info!("{cve}: {} candidate commits", candidates.commits.len());

    let per_commit = map_ordered(&candidates.commits, concurrent(cfg), |c| commit_contexts(c, &repo, cfg.max_contexts));
    let mut contexts: BTreeMap<String, Vec<FunctionContext>> = BTreeMap::new();
    for (c, cc) in candidates.commits.iter().zip(per_commit) {
        for n in &cc.notices {
            log::info!("{}: {n}", c.abbrev);
        }
        contexts.insert(c.hash.clone(), cc.contexts);
    }

    let templates = templates(cfg)?;
    let judge = LlmJudge {
        record: &record,
        contexts: &contexts,
        templates: &templates,
        token_budget: cfg.token_budget,
        gateway: &gateway,
    };
    // a consumable script answers in request order, so keep requests sequential
    let options = VoteOptions {
        batch_size: cfg.batch_size,
        rounds: cfg.rounds,
        literal_algorithm1: cfg.literal_algorithm1,
        shuffle_seed: cfg.shuffle_seed(),
        concurrent: concurrent(cfg) && !gateway.order_sensitive(),
    };
    let tally = run_votes(cve.as_str(), &candidates.commits, &options, &judge)?;

    let core: Vec<CommitRecord> = tally
        .winners
        .iter()
        .filter_map(|h| candidates.get(h).cloned())
        .collect();
    let result = if core.is_empty() {
        PatchResult {
            cve_id: cve.to_string(),
            core: vec![],
            expanded: vec![],
            final_set: vec![],
        }
    } else {
        let tags = list_tags(&repo)?;
        let mut db: BTreeMap<String, CommitRecord> = BTreeMap::new();
        for pair in &candidates.version_pairs {
            for c in build_search_db(&repo, &pair.fixed, &tags)? {
                db.entry(c.hash.clone()).or_insert(c);
            }
        }
        let mut db: Vec<CommitRecord> = db.into_values().collect();
        db.sort_by(|a, b| a.commit_date.cmp(&b.commit_date).then_with(|| a.hash.cmp(&b.hash)));
        expand(&core, &db, &record)
    };

    let out_dir = cfg.out_dir.join(cve.as_str());
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let summary = render_summary(&cve, &spec, &candidates, &tally, &result);
    let mock_script_sha256 = match (cfg.provider, &cfg.mock_script) {
        (Provider::Mock, Some(p)) => Some(sha256_hex(&[&std::fs::read(p).map_err(io_err(p))?])),
        _ => None,
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        cve_id: cve.as_str(),
        repo: &spec,
        repo_head: repo.rev_parse("HEAD")?,
        record_sha256: sha256_hex(&[to_json(&record).as_bytes()]),
        mock_script_sha256,
        config: cfg,
    };
    write_file(&out_dir.join("patch_result.json"), &to_json(&result))?;
    write_file(&out_dir.join("vote_tally.json"), &to_json(&tally))?;
    write_file(&out_dir.join("candidates.json"), &to_json(&candidates))?;
    write_file(&out_dir.join("manifest.json"), &to_json(&manifest))?;
    write_file(&out_dir.join("summary.txt"), &summary)?;
    Ok(LocateOutcome {
        out_dir,
        result,
        tally,
        candidates,
        summary,
    })
}

fn render_summary(cve: &CveId, repo: &str, set: &CandidateSet, tally: &VoteTally, result: &PatchResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{cve} in {repo}");
    for p in &set.version_pairs {
        let prior = p.prior.as_ref().map(|t| t.name.as_str()).unwrap_or("(start of history)");
        let _ = writeln!(s, "range: {prior}..{}", p.fixed.name);
    }
    let _ = writeln!(
        s,
        "candidates: {} (cross-filter {})",
        set.commits.len(),
        if set.filter_trace.cross_filter_applied { "applied" } else { "not applied" }
    );
    let _ = writeln!(
        s,
        "rounds: {}, queries: {}, abstentions: {}",
        tally.rounds_completed, tally.queries, tally.abstentions
    );
    let mut votes: Vec<(&String, &usize)> = tally.votes.iter().collect();
    votes.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    for (h, n) in votes {
        let _ = writeln!(s, "  {}  {n} vote(s)", &h[..h.len().min(12)]);
    }
    if result.final_set.is_empty() {
        s.push_str("no patch commit found\n");
        return s;
    }
    s.push_str("patch commits:\n");
    for h in &result.final_set {
        let how = match result.expanded.iter().find(|e| &e.hash == h) {
            Some(e) => serde_json::to_value(e.relation).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
            None => "voted".to_string(),
        };
        let _ = writeln!(s, "  {h}  {how}");
    }
    s
}

/// Score a predictions file as sets and at each Top-K cutoff. Reports are
/// written to `<out_dir>/report.*` and `<out_dir>/report.top<K>.*`.
pub fn evaluate(cfg: &RunConfig, predictions: &Path, ks: &[usize]) -> Result<Vec<EvalReport>, PipelineError> {
    let records = load_predictions(predictions)?;
    if ks.contains(&0) {
        return Err(PipelineError::Input("k must be at least 1".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let mut reports = Vec::new();
    for k in std::iter::once(None).chain(ks.iter().copied().map(Some)) {
        let report = score(&records, k)?;
        let stem = match k {
            Some(k) => format!("report.top{k}"),
            None => "report".to_string(),
        };
        for fmt in [ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Csv] {
            let path = cfg.out_dir.join(format!("{stem}.{}", fmt.extension()));
            write_file(&path, &emit_report(Reportable::Eval(&report), fmt))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CveCount {
    pub cve_id: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Skipped {
    pub cve_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsOutcome {
    pub stats: CandidateStats,
    pub counts: Vec<CveCount>,
    pub skipped: Vec<Skipped>,
}

fn find_repo(cfg: &RunConfig, repos_dir: Option<&Path>, name: &str) -> Result<Repo, PipelineError> {
    if let Some(dir) = repos_dir {
        let last = name.rsplit('/').next().unwrap_or(name);
        for cand in [dir.join(clone_dir_name(name)), dir.join(name), dir.join(last)] {
            if cand.is_dir() {
                return Ok(Repo::open(&cand)?);
            }
        }
    }
    if cfg.provider != Provider::Live {
        return Err(PipelineError::Input(format!("repository {name} not found locally")));
    }
    Ok(acquire_repo(name, &cfg.cache_dir, cfg.refresh)?)
}

/// Candidate counts per CVE over the unfiltered version ranges. CVEs that
/// cannot be resolved are skipped and reported.
pub fn stats(cfg: &RunConfig, dataset: &Path, repos_dir: Option<&Path>) -> Result<StatsOutcome, PipelineError> {
    let load = load_dataset(dataset)?;
    if load.records.is_empty() {
        return Err(PipelineError::Input(format!("{}: dataset has no records", dataset.display())));
    }
    let per_cve = map_ordered(&load.records, concurrent(cfg), |r| -> Result<usize, PipelineError> {
        let hints = extract_version_hints(r);
        let first = hints
            .first()
            .ok_or_else(|| PipelineError::Input("no version hint in the record".into()))?;
        let repo = find_repo(cfg, repos_dir, &first.repo)?;
        let (_, ranges) = resolve_ranges(&hints, &repo)?;
        let mut hashes: Vec<&str> = ranges.iter().flat_map(|r| r.commits.iter().map(|c| c.hash.as_str())).collect();
        hashes.sort_unstable();
        hashes.dedup();
        Ok(hashes.len())
    });
    let mut counts = Vec::new();
    let mut skipped = Vec::new();
    for (r, res) in load.records.iter().zip(per_cve) {
        match res {
            Ok(count) => counts.push(CveCount {
                cve_id: r.cve_id.to_string(),
                count,
            }),
            Err(e) => {
                log::warn!("{}: skipped: {e}", r.cve_id);
                skipped.push(Skipped {
                    cve_id: r.cve_id.to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    let raw: Vec<u64> = counts.iter().map(|c| c.count as u64).collect();
    let stats = candidate_stats(&raw)?;
    let outcome = StatsOutcome { stats, counts, skipped };
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    write_file(&cfg.out_dir.join("stats.json"), &to_json(&outcome))?;
    let mut md = emit_report(Reportable::Stats(&outcome.stats), ReportFormat::Markdown);
    let _ = writeln!(md, "\nskipped: {}", outcome.skipped.len());
    write_file(&cfg.out_dir.join("stats.md"), &md)?;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheSection {
    pub name: String,
    pub files: u64,
    pub bytes: u64,
}

fn dir_usage(path: &Path) -> (u64, u64) {
    walkdir::WalkDir::new(path)
        .into_iter()
        .flatten()
        .filter(|e| e.file_type().is_file())
        .fold((0, 0), |(f, b), e| (f + 1, b + e.metadata().map(|m| m.len()).unwrap_or(0)))
}

pub const CACHE_SECTIONS: [&str; 3] = ["llm", "repos", "vuln"];

pub fn cache_inspect(cfg: &RunConfig) -> Vec<CacheSection> {
    CACHE_SECTIONS
        .iter()
        .map(|name| {
            let (files, bytes) = dir_usage(&cfg.cache_dir.join(name));
            CacheSection {
                name: name.to_string(),
                files,
                bytes,
            }
        })
        .collect()
}

/// Remove one cache section, or all of them.
pub fn cache_clear(cfg: &RunConfig, section: Option<&str>) -> Result<(), PipelineError> {
    let names: Vec<&str> = match section {
        Some(s) if CACHE_SECTIONS.contains(&s) => vec![s],
        Some(s) => return Err(PipelineError::Input(format!("unknown cache section {s:?} (llm, repos, vuln)"))),
        None => CACHE_SECTIONS.to_vec(),
    };
    for n in names {
        let p = cfg.cache_dir.join(n);
        if p.exists() {
            std::fs::remove_dir_all(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}
