//! Add-k smoothed n-gram backend.
//!
//! Losses come from the order-`n` model with BOS padding and no end symbol:
//! `P(w | h) = (c(h, w) + k) / (c(h) + k * V)` where `V` counts the corpus
//! types plus [`UNK_TOKEN`]. Substitution proposals mix a left-bigram and a
//! unigram estimate, `lambda * P(w | left) + (1 - lambda) * P(w)`, and then
//! blend with the uniform distribution at rate `dropout_p`, which plays the
//! role embedding dropout plays for a masked LM. Proposals range over corpus
//! types only; the unknown symbol is never proposed.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{
    sort_candidates, whitespace_tokenize, Reduction, ScoringError, ScoringOracle,
    SubstitutionOracle, TokenDistribution, Tokenized,
};
use crate::corpus::TextSample;

pub const UNK_TOKEN: &str = "<unk>";
const BOS: u32 = u32::MAX;

#[derive(Debug, Clone, Default, PartialEq)]
struct Row {
    total: u64,
    next: HashMap<u32, u64>,
}

impl Row {
    fn add(&mut self, w: u32, count: u64) {
        self.total += count;
        *self.next.entry(w).or_insert(0) += count;
    }

    fn count(&self, w: u32) -> u64 {
        self.next.get(&w).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    add_k: f64,
    lambda: f64,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    contexts: HashMap<Vec<u32>, Row>,
    unigram: Vec<u64>,
    unigram_total: u64,
    bigram: HashMap<u32, Row>,
}

/// Fits an immutable backend usable both as a scoring and a substitution oracle.
pub fn fit_ngram_backend(
    corpus: &[TextSample],
    order: usize,
    add_k: f64,
) -> Result<NgramModel, ScoringError> {
    NgramModel::fit(corpus.iter().map(|s| s.text.as_str()), order, add_k)
}

impl NgramModel {
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    pub fn fit<'a, I>(texts: I, order: usize, add_k: f64) -> Result<Self, ScoringError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if order == 0 {
            return Err(ScoringError::InvalidConfig("order must be at least 1".into()));
        }
        if !(add_k.is_finite() && add_k > 0.0) {
            return Err(ScoringError::InvalidConfig(format!(
                "add_k must be positive, got {add_k}"
            )));
        }
        let sentences: Vec<Vec<String>> = texts
            .into_iter()
            .map(|t| whitespace_tokenize(t).tokens)
            .filter(|t| !t.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(ScoringError::InvalidConfig("corpus is empty".into()));
        }

        let mut vocab: Vec<String> = sentences.iter().flatten().cloned().collect();
        vocab.sort_unstable();
        vocab.dedup();
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();

        let mut model = Self {
            order,
            add_k,
            lambda: Self::DEFAULT_LAMBDA,
            unigram: vec![0; vocab.len()],
            vocab,
            index,
            contexts: HashMap::new(),
            unigram_total: 0,
            bigram: HashMap::new(),
        };
        for sentence in &sentences {
            let ids: Vec<u32> = sentence.iter().map(|w| model.index[w]).collect();
            for (i, &w) in ids.iter().enumerate() {
                let ctx = model.context(&ids, i);
                model.contexts.entry(ctx).or_default().add(w, 1);
                model.unigram[w as usize] += 1;
                model.unigram_total += 1;
                if i > 0 {
                    model.bigram.entry(ids[i - 1]).or_default().add(w, 1);
                }
            }
        }
        Ok(model)
    }

    /// Interpolation weight of the left-bigram term in substitution proposals.
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        assert!((0.0..=1.0).contains(&lambda), "lambda must lie in [0, 1]");
        self.lambda = lambda;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Corpus types plus the unknown symbol.
    pub fn vocab_size(&self) -> usize {
        self.vocab.len() + 1
    }

    pub fn types(&self) -> &[String] {
        &self.vocab
    }

    fn unk(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unk())
    }

    fn context(&self, ids: &[u32], i: usize) -> Vec<u32> {
        let width = self.order - 1;
        (0..width)
            .map(|j| {
                // j-th slot of the window ending just before i
                let back = width - j;
                if back > i {
                    BOS
                } else {
                    ids[i - back]
                }
            })
            .collect()
    }

    /// Smoothed conditional probability of `word` after `history`
    /// (the `order - 1` preceding tokens, `None` for sentence start padding).
    pub fn conditional_prob(&self, history: &[Option<&str>], word: &str) -> f64 {
        assert_eq!(history.len(), self.order - 1, "history must have order - 1 tokens");
        let ctx: Vec<u32> = history
            .iter()
            .map(|h| h.map_or(BOS, |t| self.id(t)))
            .collect();
        self.prob_ids(&ctx, self.id(word))
    }

    fn prob_ids(&self, ctx: &[u32], w: u32) -> f64 {
        let (c, total) = self
            .contexts
            .get(ctx)
            .map_or((0, 0), |row| (row.count(w), row.total));
        (c as f64 + self.add_k) / (total as f64 + self.add_k * self.vocab_size() as f64)
    }

    fn loss_of(&self, text: &str, reduction: Reduction) -> Result<f64, ScoringError> {
        let tokens = whitespace_tokenize(text).tokens;
        if tokens.is_empty() {
            return Err(ScoringError::EmptyText);
        }
        let ids: Vec<u32> = tokens.iter().map(|t| self.id(t)).collect();
        let mut ctx = Vec::with_capacity(self.order);
        let mut nll = 0.0;
        for i in 0..ids.len() {
            ctx.clear();
            ctx.extend(self.context(&ids, i));
            nll -= self.prob_ids(&ctx, ids[i]).ln();
        }
        Ok(match reduction {
            Reduction::Mean => nll / ids.len() as f64,
            Reduction::Sum => nll,
        })
    }

    /// Full proposal distribution over corpus types at a 1-based position.
    /// Sums to one.
    pub fn proposal(&self, tokens: &[String], position: usize, dropout_p: f64) -> Vec<f64> {
        let types = self.vocab.len();
        let uniform = 1.0 / types as f64;
        let unigram_total = self.unigram_total as f64;
        let left = (position >= 2)
            .then(|| self.index.get(&tokens[position - 2]))
            .flatten()
            .and_then(|id| self.bigram.get(id))
            .filter(|row| row.total > 0);
        (0..types)
            .map(|w| {
                let uni = self.unigram[w] as f64 / unigram_total;
                let bi = left.map_or(uni, |row| row.count(w as u32) as f64 / row.total as f64);
                let mixture = self.lambda * bi + (1.0 - self.lambda) * uni;
                (1.0 - dropout_p) * mixture + dropout_p * uniform
            })
            .collect()
    }

    pub fn save<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer(out, &Snapshot::from(self))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, ScoringError> {
        let snap: Snapshot =
            serde_json::from_reader(input).map_err(|e| ScoringError::Decode(e.to_string()))?;
        snap.try_into()
    }
}

impl ScoringOracle for NgramModel {
    fn name(&self) -> String {
        format!(
            "ngram(order={}, add_k={}, vocab={})",
            self.order,
            self.add_k,
            self.vocab_size()
        )
    }

    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        texts.iter().map(|t| self.loss_of(t, reduction)).collect()
    }
}

impl SubstitutionOracle for NgramModel {
    fn name(&self) -> String {
        format!("ngram-substitution(lambda={}, types={})", self.lambda, self.vocab.len())
    }

    fn tokenize(&self, text: &str) -> Result<Tokenized, ScoringError> {
        Ok(whitespace_tokenize(text))
    }

    /// Deterministic: the seed is accepted for interface parity and unused.
    fn distribution(
        &self,
        _text: &str,
        tokenized: &Tokenized,
        position: usize,
        dropout_p: f64,
        top_k: usize,
        _seed: u64,
    ) -> Result<TokenDistribution, ScoringError> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(ScoringError::InvalidConfig(format!(
                "dropout_p must lie in [0, 1), got {dropout_p}"
            )));
        }
        let original = &tokenized.tokens[position - 1];
        let probs = self.proposal(&tokenized.tokens, position, dropout_p);
        let original_id = self.index.get(original).map(|&i| i as usize);
        let original_prob = original_id.map_or(0.0, |i| probs[i]);
        let mut candidates: Vec<(String, f64)> = probs
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != original_id)
            .map(|(i, &p)| (self.vocab[i].clone(), p))
            .collect();
        sort_candidates(&mut candidates);
        candidates.truncate(top_k);
        Ok(TokenDistribution {
            position,
            original_token: original.clone(),
            original_prob,
            candidates,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    order: usize,
    add_k: f64,
    lambda: f64,
    vocab: Vec<String>,
    /// (context ids, word id, count); context ids use 4294967295 for padding.
    ngrams: Vec<(Vec<u32>, u32, u64)>,
    bigrams: Vec<(u32, u32, u64)>,
    unigram: Vec<u64>,
}

const SNAPSHOT_FORMAT: &str = "mia-audit/ngram-v1";

impl From<&NgramModel> for Snapshot {
    fn from(m: &NgramModel) -> Self {
        let mut ngrams: Vec<_> = m
            .contexts
            .iter()
            .flat_map(|(ctx, row)| row.next.iter().map(move |(&w, &c)| (ctx.clone(), w, c)))
            .collect();
        ngrams.sort_unstable();
        let mut bigrams: Vec<_> = m
            .bigram
            .iter()
            .flat_map(|(&l, row)| row.next.iter().map(move |(&w, &c)| (l, w, c)))
            .collect();
        bigrams.sort_unstable();
        Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            order: m.order,
            add_k: m.add_k,
            lambda: m.lambda,
            vocab: m.vocab.clone(),
            ngrams,
            bigrams,
            unigram: m.unigram.clone(),
        }
    }
}

impl TryFrom<Snapshot> for NgramModel {
    type Error = ScoringError;

    fn try_from(s: Snapshot) -> Result<Self, Self::Error> {
        let bad = |msg: &str| ScoringError::Decode(format!("invalid n-gram snapshot: {msg}"));
        if s.format != SNAPSHOT_FORMAT {
            return Err(bad("unknown format tag"));
        }
        if s.order == 0 || s.unigram.len() != s.vocab.len() || s.vocab.is_empty() {
            return Err(bad("inconsistent sizes"));
        }
        let types = s.vocab.len() as u32;
        let index = s
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let mut contexts: HashMap<Vec<u32>, Row> = HashMap::new();
        for (ctx, w, c) in s.ngrams {
            if ctx.len() != s.order - 1 || w >= types || ctx.iter().any(|&t| t >= types && t != BOS) {
                return Err(bad("n-gram entry out of range"));
            }
            contexts.entry(ctx).or_default().add(w, c);
        }
        let mut bigram: HashMap<u32, Row> = HashMap::new();
        for (l, w, c) in s.bigrams {
            if l >= types || w >= types {
                return Err(bad("bigram entry out of range"));
            }
            bigram.entry(l).or_default().add(w, c);
        }
        Ok(Self {
            order: s.order,
            add_k: s.add_k,
            lambda: s.lambda,
            unigram_total: s.unigram.iter().sum(),
            unigram: s.unigram,
            vocab: s.vocab,
            index,
            contexts,
            bigram,
        })
    }
}
