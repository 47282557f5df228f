//! Batched tournament rounds over the candidate commits and majority voting
//! across rounds.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code_context::FunctionContext;
use crate::llm_gateway::{extract_commit_choice, CommitChoice, Gateway, GatewayError};
use crate::par::map_ordered;
use crate::prompt_forge::{build_prompt, PromptError, TemplateSet};
use crate::repo_miner::CommitRecord;
use crate::vuln_intel::VulnRecord;

pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_ROUNDS: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum VoteError {
    #[error("no candidate commits to vote on")]
    EmptyCandidates,
    #[error("invalid vote options: {0}")]
    InvalidOptions(&'static str),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Picks at most one commit out of a batch.
pub trait BatchJudge: Sync {
    fn choose(&self, batch: &[&CommitRecord], round_index: u32) -> Result<CommitChoice, VoteError>;
}

impl<F> BatchJudge for F
where
    F: Fn(&[&CommitRecord], u32) -> Result<CommitChoice, VoteError> + Sync,
{
    fn choose(&self, batch: &[&CommitRecord], round_index: u32) -> Result<CommitChoice, VoteError> {
        self(batch, round_index)
    }
}

/// Judge backed by the prompt builder and a chat model.
pub struct LlmJudge<'a> {
    pub record: &'a VulnRecord,
    pub contexts: &'a BTreeMap<String, Vec<FunctionContext>>,
    pub templates: &'a TemplateSet,
    pub token_budget: usize,
    pub gateway: &'a Gateway,
}

impl BatchJudge for LlmJudge<'_> {
    fn choose(&self, batch: &[&CommitRecord], round_index: u32) -> Result<CommitChoice, VoteError> {
        let bundle = build_prompt(self.record, batch, self.contexts, self.templates, self.token_budget)?;
        let transcript = self.gateway.ask(&bundle, round_index)?;
        let valid: Vec<String> = batch.iter().map(|c| c.hash.clone()).collect();
        let choice = extract_commit_choice(&transcript.response_text, &valid);
        if let CommitChoice::Abstain(reason) = &choice {
            log::info!("round {round_index}: batch of {} abstained ({reason:?})", batch.len());
        }
        Ok(choice)
    }
}

#[derive(Debug, Clone)]
pub struct VoteOptions {
    pub batch_size: usize,
    pub rounds: u32,
    /// Keep every commit left after the reduction loop as a survivor instead
    /// of asking one final selection question.
    pub literal_algorithm1: bool,
    /// Shuffle batch order per round with this seed.
    pub shuffle_seed: Option<u64>,
    /// Query batches of a stage, and rounds, concurrently.
    pub concurrent: bool,
}

impl Default for VoteOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            rounds: DEFAULT_ROUNDS,
            literal_algorithm1: false,
            shuffle_seed: None,
            concurrent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round_index: u32,
    /// Empty when the round abstained.
    pub survivors: Vec<String>,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub cve_id: String,
    pub rounds_completed: u32,
    pub votes: BTreeMap<String, usize>,
    pub abstentions: u32,
    /// Every commit with the maximum vote count, in first-vote order.
    pub winners: Vec<String>,
    pub queries: usize,
    pub rounds: Vec<RoundOutcome>,
}

fn round_rng(seed: u64, round_index: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (u64::from(round_index) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// One tournament round: split into consecutive batches of at most
/// `batch_size`, keep each batch's pick, repeat until at most `batch_size`
/// remain, then ask once more for the single survivor. A lone candidate wins
/// without a query. If every batch of a stage abstains the round abstains.
pub fn run_round(
    candidates: &[CommitRecord],
    options: &VoteOptions,
    judge: &dyn BatchJudge,
    round_index: u32,
) -> Result<RoundOutcome, VoteError> {
    if candidates.is_empty() {
        return Err(VoteError::EmptyCandidates);
    }
    if options.batch_size < 2 {
        return Err(VoteError::InvalidOptions("batch_size must be at least 2"));
    }
    let b = options.batch_size;
    let mut current: Vec<&CommitRecord> = candidates.iter().collect();
    if let Some(seed) = options.shuffle_seed {
        current.shuffle(&mut round_rng(seed, round_index));
    }
    let mut queries = 0usize;
    let abstained = |queries| RoundOutcome {
        round_index,
        survivors: Vec::new(),
        queries,
    };

    while current.len() > b {
        let batches: Vec<&[&CommitRecord]> = current.chunks(b).collect();
        let picks = map_ordered(&batches, options.concurrent, |batch| judge.choose(batch, round_index));
        queries += batches.len();
        let mut next = Vec::with_capacity(batches.len());
        for (batch, pick) in batches.iter().zip(picks) {
            if let CommitChoice::Selected(hash) = pick? {
                // the judge may only name commits from its own batch
                if let Some(c) = batch.iter().find(|c| c.hash == hash) {
                    next.push(*c);
                }
            }
        }
        if next.is_empty() {
            return Ok(abstained(queries));
        }
        current = next;
    }

    let survivors = if options.literal_algorithm1 || current.len() == 1 {
        current.iter().map(|c| c.hash.clone()).collect()
    } else {
        queries += 1;
        match judge.choose(&current, round_index)? {
            CommitChoice::Selected(hash) if current.iter().any(|c| c.hash == hash) => vec![hash],
            _ => return Ok(abstained(queries)),
        }
    };
    Ok(RoundOutcome {
        round_index,
        survivors,
        queries,
    })
}

/// Count survivors; `None` entries are abstentions. Winners are the full
/// argmax set, ordered by first appearance.
pub fn tally(cve_id: &str, survivors: &[Option<String>]) -> VoteTally {
    let mut votes: BTreeMap<String, usize> = BTreeMap::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::new();
    let mut abstentions = 0u32;
    for (i, s) in survivors.iter().enumerate() {
        match s {
            Some(h) => {
                *votes.entry(h.clone()).or_default() += 1;
                first_seen.entry(h.as_str()).or_insert(i);
            }
            None => abstentions += 1,
        }
    }
    let max = votes.values().copied().max().unwrap_or(0);
    let mut winners: Vec<String> = votes.iter().filter(|(_, &n)| n == max && max > 0).map(|(h, _)| h.clone()).collect();
    winners.sort_by_key(|h| first_seen[h.as_str()]);
    VoteTally {
        cve_id: cve_id.to_string(),
        rounds_completed: survivors.len() as u32,
        votes,
        abstentions,
        winners,
        queries: 0,
        rounds: Vec::new(),
    }
}

/// Run `options.rounds` independent rounds over fresh copies of the
/// candidates and majority-vote the survivors.
pub fn run_votes(
    cve_id: &str,
    candidates: &[CommitRecord],
    options: &VoteOptions,
    judge: &dyn BatchJudge,
) -> Result<VoteTally, VoteError> {
    if candidates.is_empty() {
        return Err(VoteError::EmptyCandidates);
    }
    if options.rounds < 1 {
        return Err(VoteError::InvalidOptions("rounds must be at least 1"));
    }
    let round_ids: Vec<u32> = (0..options.rounds).collect();
    let outcomes: Vec<RoundOutcome> = map_ordered(&round_ids, options.concurrent, |&r| {
        run_round(candidates, options, judge, r)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;

    let mut survivors = Vec::new();
    for o in &outcomes {
        if o.survivors.is_empty() {
            survivors.push(None);
        } else {
            survivors.extend(o.survivors.iter().cloned().map(Some));
        }
    }
    let mut result = tally(cve_id, &survivors);
    result.rounds_completed = options.rounds;
    result.queries = outcomes.iter().map(|o| o.queries).sum();
    result.rounds = outcomes;
    Ok(result)
}
