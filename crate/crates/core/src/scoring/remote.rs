//! HTTP client for model servers speaking the JSON protocol in [`super::wire`].

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::wire::{
    HealthResponse, LossRequest, LossResponse, ReplacementsRequest, ReplacementsResponse,
    TokenizeRequest, TokenizeResponse, HEALTH_PATH, LOSS_PATH, REPLACEMENTS_PATH, TOKENIZE_PATH,
};
use super::{
    default_is_special, Reduction, ScoringError, ScoringOracle, SubstitutionOracle,
    TokenDistribution, Tokenized,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_secs: f64,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub max_inflight: usize,
    pub batch_size: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            timeout_secs: 60.0,
            retries: 2,
            max_inflight: 4,
            batch_size: 32,
        }
    }
}

type ChunkResult = Result<Vec<f64>, ScoringError>;

enum Failure {
    Retryable(ScoringError),
    Fatal(ScoringError),
}

pub struct RemoteOracle {
    config: RemoteConfig,
    base: String,
    agent: ureq::Agent,
    health: HealthResponse,
}

impl RemoteOracle {
    /// Connects and checks `/v1/health`.
    pub fn connect(config: RemoteConfig) -> Result<Self, ScoringError> {
        if config.max_inflight == 0 || config.batch_size == 0 {
            return Err(ScoringError::InvalidConfig(
                "max_inflight and batch_size must be positive".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let base = config.endpoint.trim_end_matches('/').to_string();
        let mut oracle = Self {
            config,
            base,
            agent,
            health: HealthResponse {
                status: String::new(),
                target_model: String::new(),
                substitution_model: String::new(),
            },
        };
        oracle.health = oracle.check_health()?;
        Ok(oracle)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn health(&self) -> &HealthResponse {
        &self.health
    }

    pub fn check_health(&self) -> Result<HealthResponse, ScoringError> {
        let health: HealthResponse = self.with_retries(|| self.get_once(HEALTH_PATH))?;
        if health.status != "ok" {
            return Err(ScoringError::ProtocolViolation(format!(
                "health status is {:?}",
                health.status
            )));
        }
        Ok(health)
    }

    fn with_retries<T>(&self, mut f: impl FnMut() -> Result<T, Failure>) -> Result<T, ScoringError> {
        let mut attempt = 0;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if attempt < self.config.retries => {
                    attempt += 1;
                    warn!("request failed ({e}); retry {attempt}/{}", self.config.retries);
                    thread::sleep(Duration::from_millis(25 * attempt as u64));
                }
                Err(Failure::Retryable(e)) => return Err(e),
            }
        }
    }

    fn get_once<R: DeserializeOwned>(&self, path: &str) -> Result<R, Failure> {
        let url = format!("{}{path}", self.base);
        let resp = self.agent.get(&url).call();
        Self::decode(resp)
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, Failure> {
        let url = format!("{}{path}", self.base);
        debug!("POST {url}");
        let resp = self.agent.post(&url).send_json(body);
        Self::decode(resp)
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, ScoringError> {
        self.with_retries(|| self.post_once(path, body))
    }

    fn decode<R: DeserializeOwned>(
        resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<R, Failure> {
        let mut resp = resp.map_err(|e| {
            Failure::Retryable(ScoringError::Transport {
                message: e.to_string(),
                sample_ids: Vec::new(),
            })
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            let err = ScoringError::Protocol { status, body };
            return Err(if status >= 500 {
                Failure::Retryable(err)
            } else {
                Failure::Fatal(err)
            });
        }
        let text = resp.body_mut().read_to_string().map_err(|e| {
            Failure::Retryable(ScoringError::Transport {
                message: e.to_string(),
                sample_ids: Vec::new(),
            })
        })?;
        serde_json::from_str(&text).map_err(|e| Failure::Fatal(ScoringError::Decode(e.to_string())))
    }

    fn loss_chunk(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        let req = LossRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
            reduction,
        };
        let resp: LossResponse = self.post(LOSS_PATH, &req)?;
        if resp.losses.len() != texts.len() {
            return Err(ScoringError::Decode(format!(
                "expected {} losses, got {}",
                texts.len(),
                resp.losses.len()
            )));
        }
        if let Some(bad) = resp.losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(ScoringError::ProtocolViolation(format!(
                "loss {bad} is not a finite nonnegative number"
            )));
        }
        Ok(resp.losses)
    }
}

impl ScoringOracle for RemoteOracle {
    fn name(&self) -> String {
        format!("remote({}, {})", self.base, self.health.target_model)
    }

    /// Splits into `batch_size` chunks and keeps at most `max_inflight`
    /// requests open; results are reassembled in input order.
    fn losses(&self, texts: &[&str], reduction: Reduction) -> Result<Vec<f64>, ScoringError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ScoringError::EmptyText);
        }
        let chunks: Vec<&[&str]> = texts.chunks(self.config.batch_size).collect();
        if chunks.len() <= 1 {
            return chunks
                .first()
                .map_or(Ok(Vec::new()), |c| self.loss_chunk(c, reduction));
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<ChunkResult>>> = Mutex::new((0..chunks.len()).map(|_| None).collect());
        let workers = self.config.max_inflight.min(chunks.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(chunk) = chunks.get(i) else { break };
                    let result = self.loss_chunk(chunk, reduction);
                    slots.lock().expect("poisoned")[i] = Some(result);
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in slots.into_inner().expect("poisoned") {
            out.extend(slot.expect("every chunk is processed")?);
        }
        Ok(out)
    }
}

impl SubstitutionOracle for RemoteOracle {
    fn name(&self) -> String {
        format!("remote({}, {})", self.base, self.health.substitution_model)
    }

    fn tokenize(&self, text: &str) -> Result<Tokenized, ScoringError> {
        let resp: TokenizeResponse = self.post(
            TOKENIZE_PATH,
            &TokenizeRequest {
                texts: vec![text.to_string()],
            },
        )?;
        let [tokens]: [Vec<String>; 1] = resp.tokens.try_into().map_err(|v: Vec<_>| {
            ScoringError::Decode(format!("expected 1 tokenization, got {}", v.len()))
        })?;
        if tokens.is_empty() {
            return Err(ScoringError::EmptyText);
        }
        Ok(align_tokens(text, tokens, |t| self.is_special(t), |t| self.surface(t)))
    }

    fn surface<'a>(&self, token: &'a str) -> &'a str {
        token.strip_prefix("##").unwrap_or(token)
    }

    fn is_special(&self, token: &str) -> bool {
        default_is_special(token)
    }

    fn distribution(
        &self,
        text: &str,
        _tokenized: &Tokenized,
        position: usize,
        dropout_p: f64,
        top_k: usize,
        seed: u64,
    ) -> Result<TokenDistribution, ScoringError> {
        let resp: ReplacementsResponse = self.post(
            REPLACEMENTS_PATH,
            &ReplacementsRequest {
                text: text.to_string(),
                position,
                dropout_p,
                top_k,
                seed,
            },
        )?;
        let dist = TokenDistribution {
            position,
            original_token: resp.original_token,
            original_prob: resp.original_prob,
            candidates: resp
                .candidates
                .into_iter()
                .map(|c| (c.token, c.prob))
                .collect(),
        };
        dist.validate()?;
        Ok(dist)
    }
}

/// Locates each token's surface form in `text`, left to right, ignoring ASCII
/// case (uncased tokenizers lowercase). Tokens that cannot be located, and
/// special tokens, get an empty span and are treated as unreplaceable.
pub fn align_tokens(
    text: &str,
    tokens: Vec<String>,
    is_special: impl Fn(&str) -> bool,
    surface: impl Fn(&str) -> &str,
) -> Tokenized {
    let mut cursor = 0;
    let spans = tokens
        .iter()
        .map(|tok| {
            if is_special(tok) {
                return cursor..cursor;
            }
            let s = surface(tok);
            match find_ignore_ascii_case(text, cursor, s) {
                Some(start) => {
                    cursor = start + s.len();
                    start..cursor
                }
                None => cursor..cursor,
            }
        })
        .collect();
    Tokenized { tokens, spans }
}

fn find_ignore_ascii_case(text: &str, from: usize, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let bytes = text.as_bytes();
    let n = needle.as_bytes();
    (from..=bytes.len().checked_sub(n.len())?).find(|&i| {
        text.is_char_boundary(i)
            && text.is_char_boundary(i + n.len())
            && bytes[i..i + n.len()].eq_ignore_ascii_case(n)
    })
}
