//! CIDEr-D: TF-IDF n-gram similarity with clipping and a Gaussian length
//! penalty, averaged over orders and references, scaled by 10.

use std::collections::BTreeMap;

use crate::error::{check_corpus, Result};
use crate::ngram::{NGram, NGramIndex, SentenceNGrams, MAX_ORDER};

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

/// TF-IDF vectors per order, their norms, and the bigram count used as the
/// length.
#[derive(Debug, Clone)]
pub struct TfIdf {
    pub vectors: Vec<BTreeMap<NGram, f64>>,
    pub norms: Vec<f64>,
    pub length: usize,
}

fn tfidf(s: &SentenceNGrams, index: &NGramIndex, log_n: f64) -> TfIdf {
    let mut vectors = Vec::with_capacity(MAX_ORDER);
    let mut norms = Vec::with_capacity(MAX_ORDER);
    for counts in &s.orders {
        let mut v = BTreeMap::new();
        let mut sq = 0.0;
        for (g, &tf) in counts {
            let w = tf as f64 * (log_n - (index.df(g).max(1) as f64).ln());
            sq += w * w;
            v.insert(g.clone(), w);
        }
        vectors.push(v);
        norms.push(sq.sqrt());
    }
    TfIdf {
        vectors,
        norms,
        length: s.orders[1].values().sum(),
    }
}

/// Per-order clipped, length-penalized cosine between two vectors.
pub fn similarity(hyp: &TfIdf, reference: &TfIdf) -> [f64; MAX_ORDER] {
    let delta = hyp.length as f64 - reference.length as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let mut val = 0.0;
        for (g, &h) in &hyp.vectors[n] {
            let r = reference.vectors[n].get(g).copied().unwrap_or(0.0);
            val += h.min(r) * r;
        }
        if hyp.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            val /= hyp.norms[n] * reference.norms[n];
        }
        out[n] = val * penalty;
    }
    out
}

/// Per-candidate scores; the corpus score is their mean.
pub fn cider_d_scores(candidates: &[String], references: &[Vec<String>]) -> Result<Vec<f64>> {
    check_corpus(candidates, references)?;
    let index = NGramIndex::new(references);
    let log_n = (index.corpus_size() as f64).ln();
    Ok(candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let hyp = tfidf(&SentenceNGrams::new(c), &index, log_n);
            let refs = &index.sets[i];
            let mut total = 0.0;
            for r in refs {
                let sim = similarity(&hyp, &tfidf(r, &index, log_n));
                total += sim.iter().sum::<f64>() / MAX_ORDER as f64;
            }
            total / refs.len() as f64 * CIDER_SCALE
        })
        .collect())
}

pub fn cider_d(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    let scores = cider_d_scores(candidates, references)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
