//! ROUGE-L: longest-common-subsequence F-measure.

use navinstruct_core::text::tokenize;

use crate::error::{check_corpus, Result};

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence score: the best precision and the best recall over the
/// references, combined with `beta`.
pub fn rouge_l_sentence(candidate: &str, references: &[String]) -> f64 {
    let c = tokenize(candidate);
    let mut best_p = 0.0f64;
    let mut best_r = 0.0f64;
    for r in references {
        let r = tokenize(r);
        let l = lcs(&c, &r) as f64;
        if !c.is_empty() {
            best_p = best_p.max(l / c.len() as f64);
        }
        if !r.is_empty() {
            best_r = best_r.max(l / r.len() as f64);
        }
    }
    if best_p == 0.0 || best_r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p)
}

pub fn rouge_l(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| rouge_l_sentence(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}
