//! Novelty and lexical diversity of a generated corpus.

use std::collections::BTreeSet;

use navinstruct_core::text::tokenize;
use serde::{Deserialize, Serialize};

use crate::error::{MetricError, Result};

/// Denominator of Div-2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BigramDenominator {
    /// Total unigram tokens, the same denominator as Div-1.
    #[default]
    UnigramTokens,
    /// Total bigram tokens.
    BigramTokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityBlock {
    /// Percentage of generated sentences that match no reference sentence.
    pub novel_percent: f64,
    pub unique_unigrams: usize,
    pub unique_bigrams: usize,
    pub total_unigrams: usize,
    pub total_bigrams: usize,
    pub div1: f64,
    pub div2: f64,
}

pub fn diversity_report(generated: &[String], references: &[String]) -> Result<DiversityBlock> {
    diversity_report_with(generated, references, BigramDenominator::UnigramTokens)
}

pub fn diversity_report_with(
    generated: &[String],
    references: &[String],
    denominator: BigramDenominator,
) -> Result<DiversityBlock> {
    if generated.is_empty() || references.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let known: BTreeSet<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
    let mut novel = 0usize;
    let mut unigrams = BTreeSet::new();
    let mut bigrams = BTreeSet::new();
    let mut total_unigrams = 0usize;
    let mut total_bigrams = 0usize;
    for g in generated {
        let toks = tokenize(g);
        if !known.contains(&toks) {
            novel += 1;
        }
        total_unigrams += toks.len();
        total_bigrams += toks.len().saturating_sub(1);
        for w in toks.windows(2) {
            bigrams.insert((w[0].clone(), w[1].clone()));
        }
        unigrams.extend(toks);
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let div2_den = match denominator {
        BigramDenominator::UnigramTokens => total_unigrams,
        BigramDenominator::BigramTokens => total_bigrams,
    };
    Ok(DiversityBlock {
        novel_percent: 100.0 * novel as f64 / generated.len() as f64,
        unique_unigrams: unigrams.len(),
        unique_bigrams: bigrams.len(),
        total_unigrams,
        total_bigrams,
        div1: ratio(unigrams.len(), total_unigrams),
        div2: ratio(bigrams.len(), div2_den),
    })
}

/// Total unigram tokens implied by a reported unique-unigram count and Div-1.
pub fn implied_total_unigrams(unique_unigrams: f64, div1: f64) -> f64 {
    unique_unigrams / div1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_counted_fixture() {
        let d = diversity_report(&s(&["a b", "a b"]), &s(&["c"])).unwrap();
        assert_eq!(d.unique_unigrams, 2);
        assert_eq!(d.total_unigrams, 4);
        assert_eq!(d.div1, 0.5);
        assert_eq!(d.unique_bigrams, 1);
        assert_eq!(d.div2, 0.25);
        assert_eq!(d.novel_percent, 100.0);
        let b = diversity_report_with(&s(&["a b", "a b"]), &s(&["c"]), BigramDenominator::BigramTokens).unwrap();
        assert_eq!(b.div2, 0.5);
    }

    #[test]
    fn novelty_uses_tokenized_equality() {
        let d = diversity_report(&s(&["Go to the Kitchen.", "walk"]), &s(&["go to the kitchen ."])).unwrap();
        assert_eq!(d.novel_percent, 50.0);
    }

    #[test]
    fn empty_rejected() {
        assert_eq!(diversity_report(&[], &s(&["a"])), Err(MetricError::EmptyCorpus));
        assert_eq!(diversity_report(&s(&["a"]), &[]), Err(MetricError::EmptyCorpus));
    }
}
