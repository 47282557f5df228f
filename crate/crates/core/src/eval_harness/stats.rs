use serde::{Deserialize, Serialize};

use super::EvalError;

/// Distribution of per-CVE candidate counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Population skewness `m3 / m2^1.5`; 0 when all counts are equal.
    pub skewness: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: u64,
    pub max: u64,
}

/// Linear interpolation between closest ranks, `p` in `[0, 1]`.
fn quantile(sorted: &[u64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    match sorted.get(lo + 1) {
        Some(&hi) if frac > 0.0 => sorted[lo] as f64 + frac * (hi as f64 - sorted[lo] as f64),
        _ => sorted[lo] as f64,
    }
}

pub fn candidate_stats(counts: &[u64]) -> Result<CandidateStats, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::EmptyCounts);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &c in counts {
        let d = c as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let skewness = if m2 == 0.0 { 0.0 } else { m3 / m2.powf(1.5) };
    Ok(CandidateStats {
        count: counts.len(),
        mean,
        median: quantile(&sorted, 0.5),
        std: m2.sqrt(),
        skewness,
        q1: quantile(&sorted, 0.25),
        q3: quantile(&sorted, 0.75),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}
