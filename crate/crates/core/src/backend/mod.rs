//! Session-based model backends: greedy generation, in-context scoring and
//! forkable state, with n-gram, scripted and remote implementations.

mod local;
mod ngram;
mod remote;
mod scripted;
pub mod server;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use local::{LocalBackend, SessionContext, TokenModel};
pub use ngram::{Bigram, NgramBackend};
pub use remote::{RemoteBackend, RETRIES};
pub use scripted::{Script, ScriptedBackend, ScriptedModel};

use crate::scoring::ModelScore;
use crate::tokenizer::{SharedTokenizer, TokenId, TokenizerError};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    MockNgram,
    MockScripted,
    Remote,
}

#[derive(Debug, Clone)]
pub struct BackendDescriptor {
    pub model_id: String,
    pub tokenizer: SharedTokenizer,
    pub kind: BackendKind,
}

/// One greedily generated token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratedToken {
    pub id: TokenId,
    pub nll: f64,
    pub eos: bool,
}

/// Result of generating up to `n` tokens. Stops early after end-of-sequence,
/// which is included in `tokens`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub nlls: Vec<f64>,
    /// Text that became decodable during this call.
    pub text_incremental: String,
    pub eos: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error("session already finished")]
    SessionFinished,
    #[error(transparent)]
    Encoding(#[from] TokenizerError),
    #[error("cannot score an empty segment")]
    EmptySegment,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("incompatible backend: {0}")]
    Incompatible(String),
}

impl BackendError {
    /// Error code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Unavailable(_) => "backend_unavailable",
            BackendError::SessionNotFound(_) => "session_not_found",
            BackendError::SessionFinished => "session_finished",
            BackendError::Encoding(_) => "encoding_failure",
            BackendError::EmptySegment => "empty_segment",
            BackendError::BadRequest(_) => "bad_request",
            BackendError::Incompatible(_) => "incompatible",
        }
    }

    /// Inverse of [`BackendError::code`] for errors received over the wire.
    pub fn from_code(code: &str, detail: &str) -> Self {
        match code {
            "session_not_found" => BackendError::SessionNotFound(detail.to_string()),
            "session_finished" => BackendError::SessionFinished,
            "encoding_failure" => BackendError::Encoding(TokenizerError::EncodingFailure {
                tokenizer: "remote".into(),
                snippet: detail.to_string(),
            }),
            "empty_segment" => BackendError::EmptySegment,
            "bad_request" => BackendError::BadRequest(detail.to_string()),
            other => BackendError::Unavailable(format!("{other}: {detail}")),
        }
    }

    pub fn is_encoding_failure(&self) -> bool {
        matches!(self, BackendError::Encoding(_))
    }
}

/// A model behind a session API.
///
/// Every method may be called concurrently for different sessions; a single
/// session must not see two mutating calls at once.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    fn model_id(&self) -> &str {
        &self.descriptor().model_id
    }

    fn tokenizer(&self) -> &SharedTokenizer {
        &self.descriptor().tokenizer
    }

    fn open_session(&self, prompt: &str) -> Result<SessionId, BackendError>;

    fn fork(&self, session: &SessionId) -> Result<SessionId, BackendError>;

    fn generate(&self, session: &SessionId, n: usize) -> Result<Generation, BackendError>;

    fn next_token(&self, session: &SessionId) -> Result<GeneratedToken, BackendError> {
        let g = self.generate(session, 1)?;
        match (g.tokens.first(), g.nlls.first()) {
            (Some(&id), Some(&nll)) => Ok(GeneratedToken { id, nll, eos: g.eos }),
            _ => Err(BackendError::Unavailable("empty generation".into())),
        }
    }

    /// NLL sum and token count of `text` after the session's context. The
    /// session is left untouched.
    fn score_text(&self, session: &SessionId, text: &str) -> Result<ModelScore, BackendError>;

    fn append_text(&self, session: &SessionId, text: &str) -> Result<(), BackendError>;

    fn close(&self, session: &SessionId) -> Result<(), BackendError>;
}

pub type SharedBackend = Arc<dyn Backend>;
