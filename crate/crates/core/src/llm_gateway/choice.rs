use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<answer>(.*?)</answer>").unwrap());
static HEX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[0-9a-fA-F]{7,40}\b").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstainReason {
    NoneFound,
    AmbiguousPrefix,
    InvalidCandidate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitChoice {
    Selected(String),
    Abstain(AbstainReason),
}

impl CommitChoice {
    pub fn selected(&self) -> Option<&str> {
        match self {
            CommitChoice::Selected(h) => Some(h),
            CommitChoice::Abstain(_) => None,
        }
    }
}

/// Pick the commit named by a model response. Hex tokens inside `<answer>`
/// tags are tried first, then tokens anywhere; the first token that
/// prefix-matches exactly one member of `valid` wins. The returned id is the
/// matching member of `valid`, verbatim.
pub fn extract_commit_choice(response: &str, valid: &[String]) -> CommitChoice {
    let lowered: Vec<String> = valid.iter().map(|v| v.to_ascii_lowercase()).collect();
    let in_answers = ANSWER_RE
        .captures_iter(response)
        .flat_map(|c| HEX_RE.find_iter(c.get(1).unwrap().as_str()).map(|m| m.as_str().to_string()).collect::<Vec<_>>());
    let anywhere = HEX_RE.find_iter(response).map(|m| m.as_str().to_string());

    let mut saw_token = false;
    let mut saw_ambiguous = false;
    let mut winner: Option<usize> = None;
    let mut extra = Vec::new();
    for token in in_answers.chain(anywhere) {
        saw_token = true;
        let token = token.to_ascii_lowercase();
        let hits: Vec<usize> = lowered
            .iter()
            .enumerate()
            .filter(|(_, v)| v.starts_with(&token) || token.starts_with(v.as_str()))
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [one] => match winner {
                None => winner = Some(*one),
                Some(w) if w != *one => extra.push(valid[*one].clone()),
                _ => {}
            },
            [] => {}
            _ => saw_ambiguous = true,
        }
    }
    if let Some(w) = winner {
        if !extra.is_empty() {
            extra.dedup();
            log::debug!("response also named {}; keeping {}", extra.join(", "), valid[w]);
        }
        return CommitChoice::Selected(valid[w].clone());
    }
    CommitChoice::Abstain(if saw_ambiguous {
        AbstainReason::AmbiguousPrefix
    } else if saw_token {
        AbstainReason::InvalidCandidate
    } else {
        AbstainReason::NoneFound
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn valid() -> Vec<String> {
        vec![format!("abc1234{}", "0".repeat(33)), format!("def5678{}", "1".repeat(33))]
    }

    #[test]
    fn answer_tag_member() {
        assert_eq!(
            extract_commit_choice("<answer>abc1234</answer>", &valid()),
            CommitChoice::Selected(valid()[0].clone())
        );
    }

    #[test]
    fn bare_token_without_tag() {
        assert_eq!(
            extract_commit_choice("I think the patch is def5678 because it adds a check.", &valid()),
            CommitChoice::Selected(valid()[1].clone())
        );
    }

    #[test]
    fn answer_tag_beats_earlier_prose() {
        let r = "Commit def5678 looks unrelated.\n<answer>ABC1234</answer>";
        assert_eq!(extract_commit_choice(r, &valid()), CommitChoice::Selected(valid()[0].clone()));
    }

    #[test]
    fn abstain_reasons() {
        assert_eq!(
            extract_commit_choice("<answer>ffffff1</answer>", &valid()),
            CommitChoice::Abstain(AbstainReason::InvalidCandidate)
        );
        assert_eq!(
            extract_commit_choice("no idea", &valid()),
            CommitChoice::Abstain(AbstainReason::NoneFound)
        );
        let twins = vec![format!("abc1234{}", "0".repeat(33)), format!("abc1234{}", "f".repeat(33))];
        assert_eq!(
            extract_commit_choice("<answer>abc1234</answer>", &twins),
            CommitChoice::Abstain(AbstainReason::AmbiguousPrefix)
        );
    }

    #[test]
    fn full_hash_against_abbrev_members() {
        let abbrevs = vec!["abc1234".to_string(), "def5678".to_string()];
        let full = format!("<answer>def5678{}</answer>", "9".repeat(33));
        assert_eq!(extract_commit_choice(&full, &abbrevs), CommitChoice::Selected("def5678".into()));
    }

    proptest! {
        #[test]
        fn never_returns_outside_valid(resp in "[ a-f0-9<>/answer]{0,80}", members in proptest::collection::vec("[0-9a-f]{40}", 1..5)) {
            if let CommitChoice::Selected(h) = extract_commit_choice(&resp, &members) {
                prop_assert!(members.contains(&h));
            }
        }
    }
}
