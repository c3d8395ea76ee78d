//! Corpus-level BLEU with multi-reference clipping.

use std::collections::BTreeMap;

use crate::error::{check_corpus, MetricError, Result};
use crate::ngram::{SentenceNGrams, MAX_ORDER};

/// Per-order clipped matches and candidate n-gram totals plus the lengths
/// entering the brevity penalty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_length: usize,
    pub reference_length: usize,
}

/// Reference length closest to `len`; ties go to the shorter one.
fn closest_length(len: usize, refs: &[SentenceNGrams]) -> usize {
    refs.iter()
        .map(SentenceNGrams::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

pub fn bleu_stats(candidates: &[String], references: &[Vec<String>]) -> Result<BleuStats> {
    check_corpus(candidates, references)?;
    let mut stats = BleuStats::default();
    for (cand, refs) in candidates.iter().zip(references) {
        let c = SentenceNGrams::new(cand);
        let r: Vec<SentenceNGrams> = refs.iter().map(|s| SentenceNGrams::new(s)).collect();
        stats.candidate_length += c.len();
        stats.reference_length += closest_length(c.len(), &r);
        for n in 0..MAX_ORDER {
            let mut max_ref: BTreeMap<&Vec<String>, usize> = BTreeMap::new();
            for rs in &r {
                for (g, &k) in &rs.orders[n] {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            for (g, &k) in &c.orders[n] {
                stats.totals[n] += k;
                stats.matches[n] += k.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    Ok(stats)
}

impl BleuStats {
    pub fn brevity_penalty(&self) -> f64 {
        if self.candidate_length == 0 {
            0.0
        } else if self.candidate_length >= self.reference_length {
            1.0
        } else {
            (1.0 - self.reference_length as f64 / self.candidate_length as f64).exp()
        }
    }

    /// BLEU-`n`: geometric mean of the first `n` precisions times the
    /// brevity penalty. Any zero precision gives 0.
    pub fn score(&self, n: usize) -> Result<f64> {
        if !(1..=MAX_ORDER).contains(&n) {
            return Err(MetricError::Order(n));
        }
        let mut log_sum = 0.0;
        for k in 0..n {
            if self.matches[k] == 0 {
                return Ok(0.0);
            }
            log_sum += (self.matches[k] as f64 / self.totals[k] as f64).ln();
        }
        Ok(self.brevity_penalty() * (log_sum / n as f64).exp())
    }
}

pub fn bleu(candidates: &[String], references: &[Vec<String>], n: usize) -> Result<f64> {
    bleu_stats(candidates, references)?.score(n)
}
