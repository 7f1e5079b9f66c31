use std::collections::HashMap;
use std::fmt::Debug;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::{
    Backend, BackendDescriptor, BackendError, BackendKind, Generation, SessionId,
};
use crate::scoring::ModelScore;
use crate::tokenizer::{CodecWindow, ContextWindow, SharedTokenizer, TokenId, Tokenizer};

/// State a model sees when choosing its next token.
pub struct SessionContext<'a> {
    pub tokenizer: &'a dyn Tokenizer,
    /// Every token of the context, including generated ones not yet decoded.
    pub tokens: &'a [TokenId],
    /// Decoded context text, excluding `pending`.
    pub text: &'a str,
    pub window: &'a ContextWindow,
    /// Trailing generated tokens that do not decode yet.
    pub pending: &'a [TokenId],
}

/// A deterministic in-process language model.
pub trait TokenModel: Send + Sync + Debug {
    /// Negative log-likelihood of `token` following `history`.
    fn nll(&self, history: &[TokenId], token: TokenId) -> f64;

    /// Greedy choice of the next token and its negative log-likelihood.
    fn greedy(&self, ctx: &SessionContext<'_>) -> (TokenId, f64);
}

#[derive(Debug, Clone)]
struct Session {
    tokens: Vec<TokenId>,
    text: String,
    pending: Vec<TokenId>,
    window: ContextWindow,
    finished: bool,
}

/// Session bookkeeping shared by the in-process mock backends.
#[derive(Debug)]
pub struct LocalBackend<M> {
    descriptor: BackendDescriptor,
    model: M,
    window: CodecWindow,
    sessions: Mutex<HashMap<SessionId, Session>>,
    next_id: AtomicU64,
}

impl<M: TokenModel> LocalBackend<M> {
    pub fn new(
        model_id: impl Into<String>,
        tokenizer: SharedTokenizer,
        kind: BackendKind,
        model: M,
        window: CodecWindow,
    ) -> Self {
        LocalBackend {
            descriptor: BackendDescriptor {
                model_id: model_id.into(),
                tokenizer,
                kind,
            },
            model,
            window,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    /// Full token context of a session.
    pub fn context_tokens(&self, session: &SessionId) -> Result<Vec<TokenId>, BackendError> {
        self.with_session(session, |s| Ok(s.tokens.clone()))
    }

    pub fn context_text(&self, session: &SessionId) -> Result<String, BackendError> {
        self.with_session(session, |s| Ok(s.text.clone()))
    }

    fn tok(&self) -> &dyn Tokenizer {
        self.descriptor.tokenizer.as_ref()
    }

    fn insert(&self, session: Session) -> SessionId {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let id = SessionId(format!("{}-{n}", self.descriptor.model_id));
        self.lock().insert(id.clone(), session);
        id
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<SessionId, Session>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn with_session<T>(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut Session) -> Result<T, BackendError>,
    ) -> Result<T, BackendError> {
        let mut sessions = self.lock();
        let session = sessions
            .get_mut(id)
            .ok_or_else(|| BackendError::SessionNotFound(id.0.clone()))?;
        f(session)
    }
}

fn require_settled(s: &Session) -> Result<(), BackendError> {
    if s.pending.is_empty() {
        Ok(())
    } else {
        Err(BackendError::BadRequest(
            "context ends inside an undecodable token run".into(),
        ))
    }
}

impl<M: TokenModel> Backend for LocalBackend<M> {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn open_session(&self, prompt: &str) -> Result<SessionId, BackendError> {
        let tokens = self.tok().encode(prompt)?;
        let window = ContextWindow::from_tokens(self.tok(), &tokens, self.window);
        Ok(self.insert(Session {
            tokens,
            text: prompt.to_string(),
            pending: Vec::new(),
            window,
            finished: false,
        }))
    }

    fn fork(&self, session: &SessionId) -> Result<SessionId, BackendError> {
        let copy = self.with_session(session, |s| Ok(s.clone()))?;
        Ok(self.insert(copy))
    }

    fn generate(&self, session: &SessionId, n: usize) -> Result<Generation, BackendError> {
        if n == 0 {
            return Err(BackendError::BadRequest("n must be positive".into()));
        }
        let tok = self.tok();
        self.with_session(session, |s| {
            if s.finished {
                return Err(BackendError::SessionFinished);
            }
            let mut out = Generation::default();
            for _ in 0..n {
                let (id, nll) = self.model.greedy(&SessionContext {
                    tokenizer: tok,
                    tokens: &s.tokens,
                    text: &s.text,
                    window: &s.window,
                    pending: &s.pending,
                });
                s.tokens.push(id);
                out.tokens.push(id);
                out.nlls.push(nll);
                if id == tok.eos_id() {
                    s.finished = true;
                    out.eos = true;
                    break;
                }
                s.pending.push(id);
                if let Some(text) = s.window.decode(tok, &s.pending) {
                    s.text.push_str(&text);
                    out.text_incremental.push_str(&text);
                    s.window.push_tokens(tok, &s.pending);
                    s.pending.clear();
                }
            }
            Ok(out)
        })
    }

    fn score_text(&self, session: &SessionId, text: &str) -> Result<ModelScore, BackendError> {
        if text.is_empty() {
            return Err(BackendError::EmptySegment);
        }
        let tok = self.tok();
        self.with_session(session, |s| {
            require_settled(s)?;
            let enc = s.window.encode(tok, text)?;
            let keep = s.tokens.len().saturating_sub(enc.replaced);
            let mut history = s.tokens[..keep].to_vec();
            let mut nll_sum = 0.0;
            for &t in &enc.tokens {
                nll_sum += self.model.nll(&history, t);
                history.push(t);
            }
            Ok(ModelScore {
                nll_sum,
                token_count: enc.tokens.len(),
            })
        })
    }

    fn append_text(&self, session: &SessionId, text: &str) -> Result<(), BackendError> {
        let tok = self.tok();
        self.with_session(session, |s| {
            if s.finished {
                return Err(BackendError::SessionFinished);
            }
            if text.is_empty() {
                return Ok(());
            }
            require_settled(s)?;
            let enc = s.window.push_text(tok, text)?;
            let keep = s.tokens.len().saturating_sub(enc.replaced);
            s.tokens.truncate(keep);
            s.tokens.extend_from_slice(&enc.tokens);
            s.text.push_str(text);
            Ok(())
        })
    }

    fn close(&self, session: &SessionId) -> Result<(), BackendError> {
        self.lock()
            .remove(session)
            .map(|_| ())
            .ok_or_else(|| BackendError::SessionNotFound(session.0.clone()))
    }
}
