//! Tokenized sentences and their n-gram multisets.

use std::collections::{BTreeMap, BTreeSet};

use navinstruct_core::text::tokenize;

pub const MAX_ORDER: usize = 4;

pub type NGram = Vec<String>;
pub type Counts = BTreeMap<NGram, usize>;

pub fn ngrams(tokens: &[String], n: usize) -> Counts {
    let mut out = Counts::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Per-sentence n-gram counts for orders `1..=MAX_ORDER`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceNGrams {
    pub tokens: Vec<String>,
    /// `orders[n - 1]` holds the n-grams.
    pub orders: Vec<Counts>,
}

impl SentenceNGrams {
    pub fn new(text: &str) -> Self {
        Self::from_tokens(tokenize(text))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let orders = (1..=MAX_ORDER).map(|n| ngrams(&tokens, n)).collect();
        Self { tokens, orders }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Sentence n-grams for a corpus of reference sets, with document
/// frequencies counted once per set.
#[derive(Debug, Clone)]
pub struct NGramIndex {
    pub sets: Vec<Vec<SentenceNGrams>>,
    pub document_frequency: BTreeMap<NGram, usize>,
}

impl NGramIndex {
    pub fn new(reference_sets: &[Vec<String>]) -> Self {
        let sets: Vec<Vec<SentenceNGrams>> = reference_sets
            .iter()
            .map(|set| set.iter().map(|s| SentenceNGrams::new(s)).collect())
            .collect();
        let mut document_frequency = BTreeMap::new();
        for set in &sets {
            let unique: BTreeSet<&NGram> = set
                .iter()
                .flat_map(|s| s.orders.iter().flat_map(|c| c.keys()))
                .collect();
            for g in unique {
                *document_frequency.entry(g.clone()).or_insert(0) += 1;
            }
        }
        Self {
            sets,
            document_frequency,
        }
    }

    pub fn corpus_size(&self) -> usize {
        self.sets.len()
    }

    pub fn df(&self, gram: &NGram) -> usize {
        self.document_frequency.get(gram).copied().unwrap_or(0)
    }
}
