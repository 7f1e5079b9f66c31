//! JSON bodies of the HTTP session protocol.
//!
//! ```text
//! POST   /v1/sessions              {"prompt"}  -> {"session_id"}
//! POST   /v1/sessions/{id}/fork    {}          -> {"session_id"}
//! POST   /v1/sessions/{id}/next    {"n"}       -> {"tokens", "nlls", "texts_incremental", "eos"}
//! POST   /v1/sessions/{id}/score   {"text"}    -> {"nll_sum", "token_count"}
//! POST   /v1/sessions/{id}/append  {"text"}    -> {"ok": true}
//! DELETE /v1/sessions/{id}                     -> {"ok": true}
//! GET    /v1/model                             -> {"model_id", "tokenizer_category", "vocab_size"}
//! ```
//!
//! Failures are 4xx responses with body `{"error": code}`.

use serde::{Deserialize, Serialize};

use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextRequest {
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub tokens: Vec<TokenId>,
    pub nlls: Vec<f64>,
    pub texts_incremental: String,
    pub eos: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub nll_sum: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ok {
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub tokenizer_category: String,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
