use std::collections::{BTreeMap, HashMap};

use super::local::{LocalBackend, SessionContext, TokenModel};
use super::{BackendError, BackendKind};
use crate::tokenizer::{CodecWindow, SharedTokenizer, TokenId, Tokenizer, TokenizerError};

/// Token bigram model with Lidstone smoothing:
/// `P(w | v) = (c(v, w) + alpha) / (c(v) + alpha * V)`, where `V` counts every
/// token including end-of-sequence. An empty history conditions on a
/// begin-of-sequence marker that is never predicted.
#[derive(Debug, Clone)]
pub struct Bigram {
    vocab_size: usize,
    eos: TokenId,
    alpha: f64,
    /// Successor counts per history token, `None` being the sequence start.
    counts: HashMap<Option<TokenId>, BTreeMap<TokenId, u64>>,
    totals: HashMap<Option<TokenId>, u64>,
}

impl Bigram {
    pub fn train<'a>(
        tok: &dyn Tokenizer,
        lines: impl IntoIterator<Item = &'a str>,
        alpha: f64,
    ) -> Result<Self, TokenizerError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(TokenizerError::InvalidVocab(format!(
                "smoothing constant must be positive, got {alpha}"
            )));
        }
        let mut model = Bigram {
            vocab_size: tok.vocab_size(),
            eos: tok.eos_id(),
            alpha,
            counts: HashMap::new(),
            totals: HashMap::new(),
        };
        for line in lines {
            let mut prev = None;
            for id in tok.encode(line)?.into_iter().chain([tok.eos_id()]) {
                *model.counts.entry(prev).or_default().entry(id).or_default() += 1;
                *model.totals.entry(prev).or_default() += 1;
                prev = Some(id);
            }
        }
        Ok(model)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn count(&self, prev: Option<TokenId>, next: TokenId) -> u64 {
        self.counts
            .get(&prev)
            .and_then(|m| m.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self, prev: Option<TokenId>) -> u64 {
        self.totals.get(&prev).copied().unwrap_or(0)
    }

    pub fn prob(&self, prev: Option<TokenId>, next: TokenId) -> f64 {
        (self.count(prev, next) as f64 + self.alpha)
            / (self.total(prev) as f64 + self.alpha * self.vocab_size as f64)
    }

    /// Most probable successor; ties go to the lowest id.
    pub fn argmax(&self, prev: Option<TokenId>) -> TokenId {
        let mut best: Option<(u64, TokenId)> = None;
        for (&id, &c) in self.counts.get(&prev).into_iter().flatten() {
            if best.is_none_or(|(bc, _)| c > bc) {
                best = Some((c, id));
            }
        }
        match best {
            Some((_, id)) => id,
            // Unseen history: every token is equally likely.
            None => 0,
        }
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }
}

impl TokenModel for Bigram {
    fn nll(&self, history: &[TokenId], token: TokenId) -> f64 {
        -self.prob(history.last().copied(), token).ln()
    }

    fn greedy(&self, ctx: &SessionContext<'_>) -> (TokenId, f64) {
        let prev = ctx.tokens.last().copied();
        let id = self.argmax(prev);
        (id, -self.prob(prev, id).ln())
    }
}

pub type NgramBackend = LocalBackend<Bigram>;

impl NgramBackend {
    pub fn train<'a>(
        model_id: impl Into<String>,
        tokenizer: SharedTokenizer,
        corpus: impl IntoIterator<Item = &'a str>,
        alpha: f64,
        window: CodecWindow,
    ) -> Result<Self, BackendError> {
        let model = Bigram::train(tokenizer.as_ref(), corpus, alpha)?;
        Ok(LocalBackend::new(
            model_id,
            tokenizer,
            BackendKind::MockNgram,
            model,
            window,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Backend;
    use crate::tokenizer::WordTokenizer;
    use std::sync::Arc;

    fn ab() -> SharedTokenizer {
        Arc::new(WordTokenizer::from_words("ab", ["a", " a", " b", "b", " "]).unwrap())
    }

    #[test]
    fn probabilities_follow_lidstone_counts() {
        let tok = ab();
        let m = Bigram::train(tok.as_ref(), ["a b", "a b a"], 0.5).unwrap();
        let a = tok.encode("a").unwrap()[0];
        let b = tok.encode(" b").unwrap()[0];
        assert_eq!(m.count(Some(a), b), 2);
        assert_eq!(m.total(Some(a)), 2);
        let v = tok.vocab_size() as f64;
        assert_eq!(m.prob(Some(a), b), 2.5 / (2.0 + 0.5 * v));
        assert_eq!(m.prob(None, a), 2.5 / (2.0 + 0.5 * v));
        let sum: f64 = (0..tok.vocab_size() as u32).map(|t| m.prob(Some(b), t)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn greedy_follows_most_frequent_successor() {
        let tok = ab();
        let backend = NgramBackend::train("m", tok.clone(), ["a b a b"], 0.1, CodecWindow::default()).unwrap();
        let s = backend.open_session("a").unwrap();
        let t = backend.next_token(&s).unwrap();
        assert_eq!(t.id, tok.encode(" b").unwrap()[0]);
        assert!(!t.eos);
    }

    #[test]
    fn rejects_non_positive_alpha() {
        assert!(Bigram::train(ab().as_ref(), ["a"], 0.0).is_err());
        assert!(Bigram::train(ab().as_ref(), ["a"], f64::NAN).is_err());
    }

    #[test]
    fn unseen_history_prefers_lowest_id() {
        let tok = ab();
        let m = Bigram::train(tok.as_ref(), ["a"], 1.0).unwrap();
        let b = tok.encode(" b").unwrap()[0];
        assert_eq!(m.argmax(Some(b)), 0);
    }
}
