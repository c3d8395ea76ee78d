//! Full metric report and the JSON-lines evaluation inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bleu::bleu_stats;
use crate::cider::cider_d;
use crate::diversity::{diversity_report, DiversityBlock};
use crate::error::{MetricError, Result};
use crate::meteor::meteor_lite;
use crate::rouge::rouge_l;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
    pub cider_d: f64,
    pub candidates: usize,
    pub reference_sentences: usize,
    pub diversity: DiversityBlock,
}

pub fn evaluate(candidates: &[String], references: &[Vec<String>]) -> Result<MetricReport> {
    let stats = bleu_stats(candidates, references)?;
    let flat: Vec<String> = references.iter().flatten().cloned().collect();
    Ok(MetricReport {
        bleu1: stats.score(1)?,
        bleu2: stats.score(2)?,
        bleu3: stats.score(3)?,
        bleu4: stats.score(4)?,
        meteor_lite: meteor_lite(candidates, references)?,
        rouge_l: rouge_l(candidates, references)?,
        cider_d: cider_d(candidates, references)?,
        candidates: candidates.len(),
        reference_sentences: flat.len(),
        diversity: diversity_report(candidates, &flat)?,
    })
}

impl MetricReport {
    /// Two aligned columns, one metric per line.
    pub fn to_table(&self) -> String {
        let d = &self.diversity;
        let rows: [(&str, String); 15] = [
            ("BLEU-1", format!("{:.4}", self.bleu1)),
            ("BLEU-2", format!("{:.4}", self.bleu2)),
            ("BLEU-3", format!("{:.4}", self.bleu3)),
            ("BLEU-4", format!("{:.4}", self.bleu4)),
            ("METEOR-lite", format!("{:.4}", self.meteor_lite)),
            ("ROUGE-L", format!("{:.4}", self.rouge_l)),
            ("CIDEr-D", format!("{:.4}", self.cider_d)),
            ("Candidates", self.candidates.to_string()),
            ("References", self.reference_sentences.to_string()),
            ("%Novel", format!("{:.1}%", d.novel_percent)),
            ("Unigrams", d.unique_unigrams.to_string()),
            ("Bigrams", d.unique_bigrams.to_string()),
            ("Tokens", d.total_unigrams.to_string()),
            ("Div-1", format!("{:.3}", d.div1)),
            ("Div-2", format!("{:.3}", d.div2)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            writeln!(out, "{k:<width$}  {v:>10}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLine {
    pub id: String,
    pub texts: Vec<String>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| MetricError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_generated(path: &Path) -> Result<Vec<GeneratedLine>> {
    read_jsonl(path)
}

pub fn read_references(path: &Path) -> Result<Vec<ReferenceLine>> {
    read_jsonl(path)
}

/// Pairs each generated line with its reference set by id, in generated order.
pub fn join(
    generated: &[GeneratedLine],
    references: &[ReferenceLine],
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut by_id: BTreeMap<&str, &Vec<String>> = BTreeMap::new();
    for r in references {
        if by_id.insert(&r.id, &r.texts).is_some() {
            return Err(MetricError::DuplicateId(r.id.clone()));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut cands = Vec::with_capacity(generated.len());
    let mut refs = Vec::with_capacity(generated.len());
    for g in generated {
        if !seen.insert(&g.id) {
            return Err(MetricError::DuplicateId(g.id.clone()));
        }
        let r = by_id
            .get(g.id.as_str())
            .ok_or_else(|| MetricError::MissingReference(g.id.clone()))?;
        cands.push(g.text.clone());
        refs.push((*r).clone());
    }
    Ok((cands, refs))
}
