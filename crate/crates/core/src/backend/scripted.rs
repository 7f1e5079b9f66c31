use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::local::{LocalBackend, SessionContext, TokenModel};
use super::BackendKind;
use crate::tokenizer::{CodecWindow, SharedTokenizer, TokenId, Tokenizer};

/// Text the model emits after a given context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub context: String,
    pub continuation: String,
}

/// Emits scripted continuations and scores tokens from a per-piece table.
///
/// For a context `c`, the model looks for the longest script context `k`
/// such that `c = k + r` with `r` a prefix of that script's continuation,
/// and emits the next token of the rest of the continuation. Without such
/// a script, or at the end of the continuation, it emits end-of-sequence.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    scripts: Vec<Script>,
    token_nlls: Vec<f64>,
    eos: TokenId,
}

impl ScriptedModel {
    /// `piece_nlls` maps token surface strings to their NLL; every other
    /// token, end-of-sequence included, costs `default_nll`.
    pub fn new(
        tokenizer: &dyn Tokenizer,
        scripts: Vec<Script>,
        piece_nlls: &BTreeMap<String, f64>,
        default_nll: f64,
    ) -> Self {
        let token_nlls = (0..tokenizer.vocab_size() as TokenId)
            .map(|id| {
                tokenizer
                    .piece(id)
                    .and_then(|p| std::str::from_utf8(p).ok())
                    .and_then(|p| piece_nlls.get(p))
                    .copied()
                    .unwrap_or(default_nll)
            })
            .collect();
        ScriptedModel {
            scripts,
            token_nlls,
            eos: tokenizer.eos_id(),
        }
    }

    /// Rest of the matching script's continuation after `text`.
    pub fn remaining<'a>(&'a self, text: &str) -> Option<&'a str> {
        self.scripts
            .iter()
            .filter_map(|s| {
                let r = text.strip_prefix(s.context.as_str())?;
                let rest = s.continuation.strip_prefix(r)?;
                Some((s.context.len(), rest))
            })
            .max_by_key(|(len, _)| *len)
            .map(|(_, rest)| rest)
    }

    fn next_id(&self, ctx: &SessionContext<'_>) -> TokenId {
        let Some(rest) = self.remaining(ctx.text).filter(|r| !r.is_empty()) else {
            return self.eos;
        };
        let Ok(enc) = ctx.window.encode(ctx.tokenizer, rest) else {
            return self.eos;
        };
        match enc.tokens.strip_prefix(ctx.pending) {
            Some([next, ..]) => *next,
            _ => self.eos,
        }
    }
}

impl TokenModel for ScriptedModel {
    fn nll(&self, _history: &[TokenId], token: TokenId) -> f64 {
        self.token_nlls[token as usize]
    }

    fn greedy(&self, ctx: &SessionContext<'_>) -> (TokenId, f64) {
        let id = self.next_id(ctx);
        (id, self.token_nlls[id as usize])
    }
}

pub type ScriptedBackend = LocalBackend<ScriptedModel>;

impl ScriptedBackend {
    pub fn scripted(
        model_id: impl Into<String>,
        tokenizer: SharedTokenizer,
        scripts: Vec<Script>,
        piece_nlls: &BTreeMap<String, f64>,
        default_nll: f64,
        window: CodecWindow,
    ) -> Self {
        let model = ScriptedModel::new(tokenizer.as_ref(), scripts, piece_nlls, default_nll);
        LocalBackend::new(model_id, tokenizer, BackendKind::MockScripted, model, window)
    }
}
