//! Word-level tokenization and vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{io_err, CoreError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const CLS: usize = 5;
pub const NUM_SPECIALS: usize = 6;

const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "<cls>"];

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

/// Lowercases, splits on whitespace, and emits every non-alphanumeric
/// character as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Token list joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
    min_frequency: usize,
    corpus_hash: String,
}

impl Vocab {
    /// Keeps tokens seen at least `min_frequency` times, ordered by
    /// descending count and then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_frequency: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(CoreError::EmptyCorpus);
        }
        if min_frequency == 0 {
            return Err(CoreError::MinFrequency);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut hasher = Sha256::new();
        for line in corpus {
            hasher.update(line.as_ref().as_bytes());
            hasher.update(b"\n");
            for tok in tokenize(line.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_frequency)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_parts(
            kept.into_iter().map(|(t, _)| t).collect(),
            min_frequency,
            hex::encode(hasher.finalize()),
        ))
    }

    fn from_parts(words: Vec<String>, min_frequency: usize, corpus_hash: String) -> Self {
        let mut tokens: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let ids = tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIALS)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            ids,
            tokens,
            min_frequency,
            corpus_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(CoreError::InvalidId {
                id,
                size: self.tokens.len(),
            })
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    /// Space-joined tokens for `ids`, skipping every special id.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id)?;
            if !is_special(id) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// Serialized vocabulary file: a header line, then one token per line
    /// starting at id 6.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "# min_frequency={} corpus_sha256={}",
            self.min_frequency, self.corpus_hash
        )
        .unwrap();
        for w in self.words() {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the serialized file; checkpoints pin this.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| CoreError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let mut min_frequency = None;
        let mut corpus_hash = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("min_frequency", v)) => {
                    min_frequency = Some(
                        v.parse::<usize>()
                            .map_err(|e| parse_err(1, format!("min_frequency: {e}")))?,
                    )
                }
                Some(("corpus_sha256", v)) => corpus_hash = Some(v.to_string()),
                _ => {}
            }
        }
        let (Some(min_frequency), Some(corpus_hash)) = (min_frequency, corpus_hash) else {
            return Err(parse_err(1, format!("malformed header {header:?}")));
        };
        let mut words = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(parse_err(i + 2, format!("bad token {line:?}")));
            }
            if !seen.insert(line) {
                return Err(parse_err(i + 2, format!("duplicate token {line:?}")));
            }
            words.push(line.to_string());
        }
        Ok(Self::from_parts(words, min_frequency, corpus_hash))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInstruction {
    pub surface: String,
    pub tokens: Vec<String>,
    pub ids: Vec<usize>,
}

impl TokenizedInstruction {
    pub fn new(surface: &str, vocab: &Vocab) -> Self {
        let tokens = tokenize(surface);
        let ids = vocab.encode_tokens(&tokens);
        Self {
            surface: surface.to_string(),
            tokens,
            ids,
        }
    }
}
