//! METEOR-lite: exact then stem unigram alignment with a fragmentation
//! penalty. No synonym stage.

use navinstruct_core::text::tokenize;

use crate::error::{check_corpus, Result};

const SUFFIXES: [&str; 4] = ["ing", "ed", "es", "s"];
const MIN_STEM: usize = 3;

/// Strips the first matching suffix when at least three characters remain.
pub fn stem(word: &str) -> &str {
    for suf in SUFFIXES {
        if let Some(base) = word.strip_suffix(suf) {
            if base.chars().count() >= MIN_STEM {
                return base;
            }
        }
    }
    word
}

/// Alignment as `(candidate index, reference index)` pairs sorted by
/// candidate index. Each stage links every unmatched candidate word, left
/// to right, to the first unmatched reference word that agrees.
pub fn align(candidate: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; candidate.len()];
    let mut pairs = Vec::new();
    let stages: [fn(&str, &str) -> bool; 2] = [|a, b| a == b, |a, b| stem(a) == stem(b)];
    for agree in stages {
        for (i, c) in candidate.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && agree(c, &reference[j])) {
                ref_used[j] = true;
                cand_used[i] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Runs of alignment pairs adjacent in both sentences.
pub fn chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

pub fn meteor_pair(candidate: &[String], reference: &[String]) -> f64 {
    let pairs = align(candidate, reference);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks(&pairs) as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

pub fn meteor_sentence(candidate: &str, references: &[String]) -> f64 {
    let c = tokenize(candidate);
    references
        .iter()
        .map(|r| meteor_pair(&c, &tokenize(r)))
        .fold(0.0, f64::max)
}

pub fn meteor_lite(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    check_corpus(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_sentence(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}
