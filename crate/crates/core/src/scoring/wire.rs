//! JSON bodies of the model-server protocol.

use serde::{Deserialize, Serialize};

use super::Reduction;

pub const HEALTH_PATH: &str = "/v1/health";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const LOSS_PATH: &str = "/v1/loss";
pub const REPLACEMENTS_PATH: &str = "/v1/replacements";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub target_model: String,
    pub substitution_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizeResponse {
    pub tokens: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRequest {
    pub texts: Vec<String>,
    pub reduction: Reduction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResponse {
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementsRequest {
    pub text: String,
    /// 1-based index into the `/v1/tokenize` output.
    pub position: usize,
    pub dropout_p: f64,
    pub top_k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementsResponse {
    pub original_token: String,
    pub original_prob: f64,
    pub candidates: Vec<Candidate>,
}
