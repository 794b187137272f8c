//! The oracle contract through which every attack observes a model.
//!
//! A [`ScoringOracle`] returns sequence losses (mean or summed negative
//! log-likelihood, natural log). A [`SubstitutionOracle`] tokenizes text and
//! returns, for one position, the replacement distribution obtained after
//! degrading the evidence of the token currently at that position.
//!
//! Two implementations ship with the crate: an add-k smoothed n-gram backend
//! ([`ngram::NgramModel`]) and an HTTP client for model servers
//! ([`remote::RemoteOracle`]).

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::TextSample;

pub mod ngram;
pub mod remote;
pub mod wire;

pub use ngram::{fit_ngram_backend, NgramModel, UNK_TOKEN};
pub use remote::{RemoteConfig, RemoteOracle};

#[derive(Debug, Clone, thiserror::Error)]
pub enum ScoringError {
    #[error("sample {sample_id:?} has an empty tokenization")]
    EmptyTokenization { sample_id: String },
    #[error("text has an empty tokenization")]
    EmptyText,
    #[error("position {position} out of range 1..={len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("unreplaceable position {position} (token {token:?})")]
    UnreplaceablePosition { position: usize, token: String },
    #[error("transport error: {message} (samples: {sample_ids:?})")]
    Transport {
        message: String,
        sample_ids: Vec<String>,
    },
    #[error("protocol error: HTTP {status}: {body}")]
    Protocol { status: u16, body: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

/// How per-token negative log-likelihoods are reduced to a sequence loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
        }
    }
}

impl std::str::FromStr for Reduction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            other => Err(format!("unknown reduction {other:?} (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub sample_id: String,
    pub loss: f64,
}

/// Replacement distribution at one position. `candidates` never contain the
/// original token and are sorted by probability descending, ties by token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    /// 1-based.
    pub position: usize,
    pub original_token: String,
    pub original_prob: f64,
    pub candidates: Vec<(String, f64)>,
}

impl TokenDistribution {
    /// Checks the structural invariants; used on every distribution crossing
    /// the wire.
    pub fn validate(&self) -> Result<(), ScoringError> {
        let bad = |msg: String| Err(ScoringError::ProtocolViolation(msg));
        if !(self.original_prob.is_finite() && (0.0..1.0).contains(&self.original_prob)) {
            return bad(format!("original_prob {} outside [0,1)", self.original_prob));
        }
        let mut mass = self.original_prob;
        for (i, (tok, p)) in self.candidates.iter().enumerate() {
            if tok == &self.original_token {
                return bad("original token in candidates".into());
            }
            if !(p.is_finite() && (0.0..=1.0).contains(p)) {
                return bad(format!("candidate {tok:?} has probability {p}"));
            }
            if i > 0 {
                let (prev_tok, prev_p) = &self.candidates[i - 1];
                if prev_p < p || (prev_p == p && prev_tok > tok) {
                    return bad("candidates not sorted by probability descending".into());
                }
            }
            mass += p;
        }
        if mass > 1.0 + 1e-6 {
            return bad(format!("total probability {mass} exceeds 1"));
        }
        Ok(())
    }
}

/// Sorts `(token, prob)` pairs by probability descending, ties by token ascending.
pub fn sort_candidates(candidates: &mut [(String, f64)]) {
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub dropout_p: f64,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            dropout_p: 0.7,
            top_k: 200,
            seed: 0,
        }
    }
}

/// Tokens of a text together with the byte span each one covers. Replacing a
/// token splices into the original string, so untouched text (including
/// whitespace) survives byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub spans: Vec<Range<usize>>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Replaces the text under the given 1-based positions. `replacements`
    /// must be sorted by position.
    pub fn splice(&self, text: &str, replacements: &[(usize, &str)]) -> String {
        let mut out = String::with_capacity(text.len() + 16);
        let mut cursor = 0;
        for &(pos, surface) in replacements {
            let span = &self.spans[pos - 1];
            out.push_str(&text[cursor..span.start]);
            out.push_str(surface);
            cursor = span.end;
        }
        out.push_str(&text[cursor..]);
        out
    }
}

/// Grey-box access to a model's loss.
pub trait ScoringOracle: Send + Sync {
    fn name(&self) -> String;

    /// Loss per text, in order. An empty tokenization is an error.
    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError>;
}

/// Masked-LM style replacement proposals.
pub trait SubstitutionOracle: Send + Sync {
    fn name(&self) -> String;

    fn tokenize(&self, text: &str) -> Result<Tokenized, ScoringError>;

    /// Control tokens and whitespace are never replaced.
    fn is_special(&self, token: &str) -> bool {
        default_is_special(token)
    }

    /// The text a token contributes when spliced into a string.
    fn surface<'a>(&self, token: &'a str) -> &'a str {
        token
    }

    /// Distribution at a validated 1-based `position`, with `seed` already
    /// derived for this (sample, position).
    fn distribution(
        &self,
        text: &str,
        tokenized: &Tokenized,
        position: usize,
        dropout_p: f64,
        top_k: usize,
        seed: u64,
    ) -> Result<TokenDistribution, ScoringError>;
}

pub fn default_is_special(token: &str) -> bool {
    token.trim().is_empty()
        || (token.len() > 2 && token.starts_with('[') && token.ends_with(']'))
        || (token.len() > 2 && token.starts_with('<') && token.ends_with('>'))
}

impl<T: ScoringOracle + ?Sized> ScoringOracle for &T {
    fn name(&self) -> String {
        (**self).name()
    }
    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        (**self).losses(texts, reduction)
    }
}

impl<T: ScoringOracle + ?Sized> ScoringOracle for std::sync::Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        (**self).losses(texts, reduction)
    }
}

impl<T: ScoringOracle + ?Sized> ScoringOracle for Box<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        (**self).losses(texts, reduction)
    }
}

/// One [`LossResult`] per sample, in order.
pub fn batch_loss<O: ScoringOracle + ?Sized>(
    oracle: &O,
    samples: &[TextSample],
    reduction: Reduction,
) -> Result<Vec<LossResult>, ScoringError> {
    let texts: Vec<&str> = samples.iter().map(|s| s.text.as_str()).collect();
    let losses = oracle.losses(&texts, reduction).map_err(|e| match e {
        ScoringError::Transport { message, .. } => ScoringError::Transport {
            message,
            sample_ids: samples.iter().map(|s| s.id.clone()).collect(),
        },
        ScoringError::EmptyText => {
            let sample_id = samples
                .iter()
                .find(|s| s.text.split_whitespace().next().is_none())
                .map(|s| s.id.clone())
                .unwrap_or_default();
            ScoringError::EmptyTokenization { sample_id }
        }
        other => other,
    })?;
    Ok(samples
        .iter()
        .zip(losses)
        .map(|(s, loss)| LossResult {
            sample_id: s.id.clone(),
            loss,
        })
        .collect())
}

/// Per-(sample, position) seed so repeated queries agree while different
/// positions draw different dropout masks.
pub fn derive_seed(seed: u64, sample_id: &str, position: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((sample_id.len() as u64).to_le_bytes());
    h.update(sample_id.as_bytes());
    h.update((position as u64).to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    // Kept below 2^31 so every server-side RNG accepts it.
    u64::from_le_bytes(bytes) & 0x7fff_ffff
}

/// Checks that `position` (1-based) is in range and replaceable.
pub fn check_position<S: SubstitutionOracle + ?Sized>(
    oracle: &S,
    tokenized: &Tokenized,
    position: usize,
) -> Result<(), ScoringError> {
    if position == 0 || position > tokenized.len() {
        return Err(ScoringError::PositionOutOfRange {
            position,
            len: tokenized.len(),
        });
    }
    let token = &tokenized.tokens[position - 1];
    if oracle.is_special(token) || tokenized.spans[position - 1].is_empty() {
        return Err(ScoringError::UnreplaceablePosition {
            position,
            token: token.clone(),
        });
    }
    Ok(())
}

pub fn replacement_distribution<S: SubstitutionOracle + ?Sized>(
    oracle: &S,
    sample: &TextSample,
    position: usize,
    config: &OracleConfig,
) -> Result<TokenDistribution, ScoringError> {
    let tokenized = oracle.tokenize(&sample.text)?;
    check_position(oracle, &tokenized, position)?;
    oracle.distribution(
        &sample.text,
        &tokenized,
        position,
        config.dropout_p,
        config.top_k,
        derive_seed(config.seed, &sample.id, position),
    )
}

/// Whitespace tokenization with byte spans.
pub fn whitespace_tokenize(text: &str) -> Tokenized {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(text[s..i].to_string());
                spans.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(text[s..].to_string());
        spans.push(s..text.len());
    }
    Tokenized { tokens, spans }
}
