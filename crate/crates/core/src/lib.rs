//! Localize the commits that fix a CVE inside a git repository.
//!
//! The pipeline narrows the candidate commits using fixed-version tags and
//! multi-branch message frequency, asks a chat model to pick the patch in
//! batched tournament rounds, majority-votes across rounds and then widens
//! the result with related commits.

pub mod code_context;
pub mod config;
pub mod eval_harness;
mod fsutil;
pub mod llm_gateway;
pub mod par;
pub mod pipeline;
pub mod prompt_forge;
pub mod repo_miner;
pub mod result_expander;
#[doc(hidden)]
pub mod testkit;
pub mod vote_engine;
pub mod vuln_intel;
