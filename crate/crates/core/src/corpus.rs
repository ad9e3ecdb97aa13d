//! Whitespace tokenization, vocabulary and fixed-length batching.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use crate::error::{FunnelError, Result};
use crate::rng::Rng;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];
pub const NUM_SPECIAL: usize = SPECIALS.len();

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIAL
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(FunnelError::Validation(format!("duplicate vocab entry {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Lowercased whitespace tokens, most frequent first with ties in
    /// lexicographic order, capped so the total size is at most `max_size`.
    pub fn build<'a>(lines: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for line in lines {
            for w in tokenize(line) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !SPECIALS.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size.saturating_sub(NUM_SPECIAL));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("counts have unique keys")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokens for `ids`, stopping at the first [PAD] and skipping [CLS]/[SEP].
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != PAD)
            .filter(|&&i| i != CLS && i != SEP)
            .map(|&i| self.token(i).unwrap_or("[UNK]").to_string())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIALS {
            return Err(FunnelError::Validation(
                "vocabulary must start with [PAD] [UNK] [CLS] [SEP] [MASK]".into(),
            ));
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.contains(char::is_whitespace)) {
            return Err(FunnelError::Validation(format!("invalid vocab entry {bad:?}")));
        }
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| FunnelError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FunnelError::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn tokenize(line: &str) -> impl Iterator<Item = String> + '_ {
    line.split_whitespace().map(str::to_lowercase)
}

/// One encoded sequence of fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    /// `true` for real tokens (including [CLS] and [SEP]).
    pub valid: Vec<bool>,
    /// Position ranges of whole words, in order.
    pub words: Vec<Range<usize>>,
}

impl Encoded {
    /// Positions that may be masked: real word tokens, [UNK] included.
    pub fn maskable(&self) -> Vec<usize> {
        (0..self.ids.len())
            .filter(|&i| self.valid[i] && (!is_special(self.ids[i]) || self.ids[i] == UNK))
            .collect()
    }
}

/// `[CLS] tokens [SEP]` padded to `t`. Lines longer than `t - 2` tokens are
/// truncated. A whitespace token is one word.
pub fn encode_line(line: &str, vocab: &Vocab, t: usize) -> Result<Encoded> {
    if t < 2 || !t.is_power_of_two() {
        return Err(FunnelError::Validation(format!(
            "sequence length {t} must be a power of two >= 2"
        )));
    }
    let mut ids = vec![CLS];
    let mut words = Vec::new();
    for w in tokenize(line).take(t - 2) {
        words.push(ids.len()..ids.len() + 1);
        ids.push(vocab.id(&w));
    }
    ids.push(SEP);
    let real = ids.len();
    ids.resize(t, PAD);
    let valid = (0..t).map(|i| i < real).collect();
    Ok(Encoded { ids, valid, words })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub seqs: Vec<Encoded>,
}

impl Batch {
    pub fn seq_len(&self) -> usize {
        self.seqs.first().map_or(0, |s| s.ids.len())
    }
}

/// Fixed-length encoded corpus that draws seeded random batches.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub seqs: Vec<Encoded>,
}

impl Corpus {
    pub fn from_lines(lines: &[String], vocab: Vocab, t: usize) -> Result<Self> {
        let seqs = lines
            .iter()
            .filter(|l| !l.trim().is_empty())
            .map(|l| encode_line(l, &vocab, t))
            .collect::<Result<Vec<_>>>()?;
        if seqs.is_empty() {
            return Err(FunnelError::Validation("corpus has no non-empty lines".into()));
        }
        Ok(Corpus { vocab, seqs })
    }

    /// Read a UTF-8 file, one document per line, building a vocabulary of
    /// at most `max_vocab` entries.
    pub fn load(path: &Path, max_vocab: usize, t: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FunnelError::io(path, e))?;
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let vocab = Vocab::build(lines.iter().map(String::as_str), max_vocab);
        Self::from_lines(&lines, vocab, t)
    }

    pub fn batch(&self, size: usize, rng: &mut Rng) -> Batch {
        let seqs = (0..size)
            .map(|_| self.seqs[rng.below(self.seqs.len())].clone())
            .collect();
        Batch { seqs }
    }
}

/// Deterministic toy corpus: `templates` fixed sentences of `sentence_len`
/// words over `words` distinct word types, each repeated `repeats` times.
pub fn synthetic_lines(words: usize, sentence_len: usize, templates: usize, repeats: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::new(seed);
    let sentences: Vec<String> = (0..templates)
        .map(|_| {
            (0..sentence_len)
                .map(|_| format!("w{:02}", rng.below(words)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    (0..repeats).flat_map(|_| sentences.iter().cloned()).collect()
}
