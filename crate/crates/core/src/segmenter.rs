//! Cuts a greedy token stream into shortest or aligned text segments.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, SessionId};
use crate::tokenizer::{text_unit_ends, ContextWindow, TokenId, TokenSeq, Tokenizer, TokenizerError};

pub const DEFAULT_SEGMENT_TOKEN_CAP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    #[default]
    Shortest,
    Aligned,
}

impl FromStr for SegmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "shortest" => Ok(SegmentMode::Shortest),
            "aligned" => Ok(SegmentMode::Aligned),
            other => Err(format!("unknown segment mode {other:?}, expected shortest or aligned")),
        }
    }
}

impl fmt::Display for SegmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentMode::Shortest => "shortest",
            SegmentMode::Aligned => "aligned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamToken {
    pub id: TokenId,
    pub nll: f64,
    pub eos: bool,
}

/// Source of greedily generated tokens. `Ok(None)` means the stream is
/// exhausted without an end-of-sequence token.
pub trait TokenSource {
    fn pull(&mut self) -> Result<Option<StreamToken>, SegmentError>;
}

impl TokenSource for VecDeque<StreamToken> {
    fn pull(&mut self) -> Result<Option<StreamToken>, SegmentError> {
        Ok(self.pop_front())
    }
}

/// Pulls tokens one at a time from a backend session.
pub struct BackendStream<'a> {
    pub backend: &'a dyn Backend,
    pub session: &'a SessionId,
}

impl TokenSource for BackendStream<'_> {
    fn pull(&mut self) -> Result<Option<StreamToken>, SegmentError> {
        let t = self.backend.next_token(self.session)?;
        Ok(Some(StreamToken {
            id: t.id,
            nll: t.nll,
            eos: t.eos,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegmentError {
    #[error("token stream ended before any decodable text")]
    StreamEnded,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

/// A candidate text segment produced by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    pub origin_model: String,
    /// Tokens consumed from the stream; they decode to `text` in context.
    pub origin_tokens: TokenSeq,
    pub token_nlls: Vec<f64>,
    /// No boundary was found within the token cap.
    pub token_budget_hit: bool,
    /// The end-of-sequence token directly followed the segment.
    pub ends_stream: bool,
}

/// A tokenizer together with its window over the shared context.
#[derive(Clone, Copy)]
pub struct ModelView<'a> {
    pub tokenizer: &'a dyn Tokenizer,
    pub window: &'a ContextWindow,
}

/// Segments one model's token stream. Tokens read past a segment's end are
/// kept for the next call, so each call consumes exactly its segment.
pub struct Segmenter<S> {
    source: S,
    lookahead: VecDeque<StreamToken>,
}

enum Decision {
    /// Emit the first `n` buffered tokens.
    Cut(usize),
    Wait,
}

impl<S: TokenSource> Segmenter<S> {
    pub fn new(source: S) -> Self {
        Segmenter {
            source,
            lookahead: VecDeque::new(),
        }
    }

    fn pull(&mut self) -> Result<Option<StreamToken>, SegmentError> {
        match self.lookahead.pop_front() {
            Some(t) => Ok(Some(t)),
            None => self.source.pull(),
        }
    }

    /// The first word (for tokenizers exposing words) or the first prefix
    /// that decodes in context.
    pub fn shortest(
        &mut self,
        origin: ModelView<'_>,
        model_id: &str,
        cap: usize,
    ) -> Result<Segment, SegmentError> {
        self.run(origin, model_id, cap, |ends, _, _| match ends.first() {
            Some(&n) => Decision::Cut(n),
            None => Decision::Wait,
        })
    }

    /// The shortest run of the origin's own segments whose end is a word or
    /// decodable boundary for every tokenizer in `all`.
    pub fn aligned(
        &mut self,
        origin: ModelView<'_>,
        all: &[ModelView<'_>],
        model_id: &str,
        cap: usize,
    ) -> Result<Segment, SegmentError> {
        self.run(origin, model_id, cap, |ends, ids, finished| {
            let tok = origin.tokenizer;
            let Some(&last) = ends.last() else {
                return Decision::Wait;
            };
            // Text after the last confirmed end serves as lookahead when it
            // already decodes; otherwise the text stops at that end.
            let (text, complete) = match origin.window.decode_raw(tok, ids) {
                Some(t) => (t, finished),
                None => (
                    origin.window.decode_raw(tok, &ids[..last]).unwrap_or_default(),
                    finished,
                ),
            };
            let boundaries: Vec<Vec<usize>> = all
                .iter()
                .map(|v| {
                    text_unit_ends(v.tokenizer, &v.window.text(), &text, complete)
                        .unwrap_or_default()
                })
                .collect();
            for &n in ends {
                let Some(prefix) = origin.window.decode_raw(tok, &ids[..n]) else {
                    continue;
                };
                if boundaries.iter().all(|b| b.contains(&prefix.len())) {
                    return Decision::Cut(n);
                }
            }
            Decision::Wait
        })
    }

    fn run(
        &mut self,
        origin: ModelView<'_>,
        model_id: &str,
        cap: usize,
        decide: impl Fn(&[usize], &[TokenId], bool) -> Decision,
    ) -> Result<Segment, SegmentError> {
        let tok = origin.tokenizer;
        let mut buf: Vec<StreamToken> = Vec::new();
        let mut eos: Option<StreamToken> = None;
        let mut exhausted = false;
        loop {
            let finished = eos.is_some() || exhausted;
            let ids: Vec<TokenId> = buf.iter().map(|t| t.id).collect();
            let ends = origin.window.unit_ends(tok, &ids, finished);
            if let Decision::Cut(n) = decide(&ends, &ids, finished) {
                if n <= cap {
                    return self.emit(origin, model_id, buf, n, eos, false);
                }
            }
            if buf.len() > cap || (finished && !buf.is_empty()) {
                let hit = buf.len() > cap;
                if hit {
                    // Out of budget: accept boundaries that more text could still move.
                    if let Decision::Cut(n) = decide(&ends, &ids, true) {
                        if n <= cap {
                            return self.emit(origin, model_id, buf, n, eos, true);
                        }
                    }
                }
                let best = ends.iter().copied().filter(|&e| e <= cap).max();
                return match best {
                    Some(n) => self.emit(origin, model_id, buf, n, eos, hit),
                    None if hit => self.emit(origin, model_id, buf, cap, eos, true),
                    // Undecodable leftovers before end-of-sequence are dropped.
                    None if eos.is_some() => self.emit(origin, model_id, Vec::new(), 0, eos, false),
                    None => Err(SegmentError::StreamEnded),
                };
            }
            if finished {
                return match eos {
                    Some(_) => self.emit(origin, model_id, Vec::new(), 0, eos, false),
                    None => Err(SegmentError::StreamEnded),
                };
            }
            match self.pull()? {
                None => exhausted = true,
                Some(t) if t.eos => eos = Some(t),
                Some(t) => buf.push(t),
            }
        }
    }

    /// Returns the first `n` buffered tokens as a segment and pushes the
    /// rest, plus a pending end-of-sequence, back onto the lookahead.
    fn emit(
        &mut self,
        origin: ModelView<'_>,
        model_id: &str,
        mut buf: Vec<StreamToken>,
        n: usize,
        eos: Option<StreamToken>,
        budget_hit: bool,
    ) -> Result<Segment, SegmentError> {
        let tok = origin.tokenizer;
        let rest = buf.split_off(n);
        let ends_stream = eos.is_some() && rest.is_empty();
        for t in rest.into_iter().chain(eos.filter(|_| !ends_stream)).rev() {
            self.lookahead.push_front(t);
        }
        let ids: Vec<TokenId> = buf.iter().map(|t| t.id).collect();
        let text = match origin.window.decode(tok, &ids) {
            Some(text) => text,
            None => origin.window.decode_lossy(tok, &ids),
        };
        Ok(Segment {
            text,
            origin_model: model_id.to_string(),
            origin_tokens: TokenSeq::new(tok, ids)?,
            token_nlls: buf.iter().map(|t| t.nll).collect(),
            token_budget_hit: budget_hit,
            ends_stream,
        })
    }
}
