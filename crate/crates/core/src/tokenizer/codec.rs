//! Incremental encoding and decoding with a bounded context window.
//!
//! Position-sensitive tokenizers cannot decode new tokens in isolation, and
//! merge-based tokenizers cannot encode new text in isolation. Instead of
//! re-running the codec over the whole context, the tokens of the last `k`
//! decoded words are prepended to the new tokens and the words' text is
//! stripped from the result afterwards. Encoding works the same way with the
//! words' text prepended to the new text.

use serde::{Deserialize, Serialize};

use super::{TokenId, Tokenizer, TokenizerError};

/// Number of trailing context words retained for incremental operations.
/// Bound on how far a window may grow while waiting for a start that
/// re-encodes to itself, as a multiple of `k`.
const MAX_GROWTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct CodecWindow(usize);

impl CodecWindow {
    pub const DEFAULT_K: usize = 4;

    pub fn new(k: usize) -> Result<Self, TokenizerError> {
        if k == 0 {
            return Err(TokenizerError::EmptyWindow);
        }
        Ok(CodecWindow(k))
    }

    pub fn k(self) -> usize {
        self.0
    }
}

impl Default for CodecWindow {
    fn default() -> Self {
        CodecWindow(Self::DEFAULT_K)
    }
}

impl TryFrom<usize> for CodecWindow {
    type Error = TokenizerError;

    fn try_from(k: usize) -> Result<Self, Self::Error> {
        CodecWindow::new(k)
    }
}

impl From<CodecWindow> for usize {
    fn from(w: CodecWindow) -> usize {
        w.0
    }
}

/// Result of encoding new text after a context.
///
/// When the new text merges with the end of the context (a word continued
/// without a space, say), the last `replaced` context tokens must be dropped
/// before appending `tokens`. The full-context encoding then equals the old
/// context tokens minus `replaced` trailing ids, followed by `tokens`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IncrementalEncoding {
    pub replaced: usize,
    pub tokens: Vec<TokenId>,
}

/// Decodes `new` after `head_ids`, whose raw decode is `head_text`. Returns
/// the new text only if it encodes back to exactly `new` in that context.
fn decode_after(
    tok: &dyn Tokenizer,
    head_ids: &[TokenId],
    head_text: &str,
    new: &[TokenId],
) -> Option<String> {
    let mut all = Vec::with_capacity(head_ids.len() + new.len());
    all.extend_from_slice(head_ids);
    all.extend_from_slice(new);
    let full = tok.decode_raw(&all)?;
    let suffix = full.strip_prefix(head_text)?;
    let head_enc = tok.encode(head_text).ok()?;
    let back = tok.encode(&full).ok()?;
    let roundtrips = back.len() == head_enc.len() + new.len()
        && back[..head_enc.len()] == head_enc[..]
        && back[head_enc.len()..] == *new;
    roundtrips.then(|| suffix.to_string())
}

fn encode_after(
    tok: &dyn Tokenizer,
    head_text: &str,
    new_text: &str,
) -> Result<IncrementalEncoding, TokenizerError> {
    let head = tok.encode(head_text)?;
    let full = tok.encode(&format!("{head_text}{new_text}"))?;
    let common = head.iter().zip(&full).take_while(|(a, b)| a == b).count();
    Ok(IncrementalEncoding {
        replaced: head.len() - common,
        tokens: full[common..].to_vec(),
    })
}

/// Most words a window may hold: `k`, grown while no earlier start
/// re-encodes to the same tokens, plus one word still being decoded.
fn max_words(window: CodecWindow) -> usize {
    MAX_GROWTH * window.k() + 1
}

/// Decodes `new_tokens` given the last decoded words and their tokens.
///
/// Returns `Ok(None)` when the new tokens are not decodable in this context,
/// i.e. their text does not encode back to the same tokens.
pub fn decode_incremental(
    tok: &dyn Tokenizer,
    prev_words: &[String],
    prev_tail_tokens: &[TokenId],
    new_tokens: &[TokenId],
    window: CodecWindow,
) -> Result<Option<String>, TokenizerError> {
    let head_text = prev_words.concat();
    if prev_words.len() > max_words(window) || tok.decode_raw(prev_tail_tokens).as_deref() != Some(&head_text) {
        return Err(TokenizerError::WindowMismatch);
    }
    Ok(decode_after(tok, prev_tail_tokens, &head_text, new_tokens))
}

/// Encodes `new_text` after the last decoded words.
pub fn encode_incremental(
    tok: &dyn Tokenizer,
    prev_words: &[String],
    new_text: &str,
    window: CodecWindow,
) -> Result<IncrementalEncoding, TokenizerError> {
    if prev_words.len() > max_words(window) {
        return Err(TokenizerError::WindowMismatch);
    }
    encode_after(tok, &prev_words.concat(), new_text)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Unit {
    tokens: Vec<TokenId>,
    text: String,
}

/// Rolling window over the last `k` words of a token context.
///
/// Words come from the tokenizer's own boundaries when it exposes them;
/// otherwise a word is a shortest run of tokens that decodes in context.
/// The window's tokens always raw-decode to the concatenation of its words.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ContextWindow {
    window: CodecWindow,
    units: Vec<Unit>,
    /// The last unit holds tokens that did not decode yet.
    open_tail: bool,
}

impl ContextWindow {
    pub fn new(window: CodecWindow) -> Self {
        ContextWindow {
            window,
            units: Vec::new(),
            open_tail: false,
        }
    }

    pub fn from_tokens(tok: &dyn Tokenizer, ids: &[TokenId], window: CodecWindow) -> Self {
        let mut w = Self::new(window);
        w.push_tokens(tok, ids);
        w
    }

    pub fn from_text(
        tok: &dyn Tokenizer,
        text: &str,
        window: CodecWindow,
    ) -> Result<Self, TokenizerError> {
        Ok(Self::from_tokens(tok, &tok.encode(text)?, window))
    }

    pub fn window(&self) -> CodecWindow {
        self.window
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.units.iter().flat_map(|u| u.tokens.iter().copied()).collect()
    }

    pub fn words(&self) -> Vec<String> {
        self.units.iter().map(|u| u.text.clone()).collect()
    }

    pub fn text(&self) -> String {
        self.units.iter().map(|u| u.text.as_str()).collect()
    }

    pub fn push_tokens(&mut self, tok: &dyn Tokenizer, ids: &[TokenId]) {
        if ids.is_empty() {
            return;
        }
        if tok.category().has_words() {
            let mut all = self.tokens();
            all.extend_from_slice(ids);
            self.units = word_units(tok, &all);
            self.open_tail = false;
        } else {
            let mut pending = Vec::new();
            if self.open_tail {
                pending = self.units.pop().map(|u| u.tokens).unwrap_or_default();
                self.open_tail = false;
            }
            pending.extend_from_slice(ids);
            let mut head = self.tokens();
            let mut head_text = self.text();
            let mut start = 0;
            for j in 1..=pending.len() {
                if let Some(text) = decode_after(tok, &head, &head_text, &pending[start..j]) {
                    self.units.push(Unit {
                        tokens: pending[start..j].to_vec(),
                        text,
                    });
                    self.trim(tok);
                    head = self.tokens();
                    head_text = self.text();
                    start = j;
                }
            }
            if start < pending.len() {
                self.units.push(Unit {
                    tokens: pending[start..].to_vec(),
                    text: String::new(),
                });
                self.open_tail = true;
            }
        }
        self.trim(tok);
    }

    /// Appends text, retracting context tokens it merges with.
    pub fn push_text(
        &mut self,
        tok: &dyn Tokenizer,
        text: &str,
    ) -> Result<IncrementalEncoding, TokenizerError> {
        let enc = self.encode(tok, text)?;
        let mut to_drop = enc.replaced;
        let mut keep = Vec::new();
        while to_drop > 0 {
            let Some(unit) = self.units.pop() else { break };
            if unit.tokens.len() > to_drop {
                keep = unit.tokens[..unit.tokens.len() - to_drop].to_vec();
                to_drop = 0;
            } else {
                to_drop -= unit.tokens.len();
            }
            self.open_tail = false;
        }
        if !keep.is_empty() || enc.replaced > 0 {
            self.relabel(tok);
        }
        keep.extend_from_slice(&enc.tokens);
        self.push_tokens(tok, &keep);
        Ok(enc)
    }

    /// Text of `new` in this context, if it roundtrips.
    pub fn decode(&self, tok: &dyn Tokenizer, new: &[TokenId]) -> Option<String> {
        decode_after(tok, &self.tokens(), &self.text(), new)
    }

    /// Text of `new` in this context without the roundtrip check.
    pub fn decode_raw(&self, tok: &dyn Tokenizer, new: &[TokenId]) -> Option<String> {
        let mut all = self.tokens();
        all.extend_from_slice(new);
        let full = tok.decode_raw(&all)?;
        full.strip_prefix(self.text().as_str()).map(str::to_string)
    }

    /// Best-effort text of `new` in this context.
    pub fn decode_lossy(&self, tok: &dyn Tokenizer, new: &[TokenId]) -> String {
        self.decode_raw(tok, new)
            .unwrap_or_else(|| tok.decode_lossy(new))
    }

    pub fn encode(
        &self,
        tok: &dyn Tokenizer,
        text: &str,
    ) -> Result<IncrementalEncoding, TokenizerError> {
        encode_after(tok, &self.text(), text)
    }

    /// Token counts (within `new`) at which a confirmed word of `new` ends.
    ///
    /// For word-exposing tokenizers a word is confirmed once a later word has
    /// started, or when `finished` says no more tokens will follow. Otherwise
    /// words are successive shortest runs that decode in context.
    pub fn unit_ends(&self, tok: &dyn Tokenizer, new: &[TokenId], finished: bool) -> Vec<usize> {
        if new.is_empty() {
            return Vec::new();
        }
        let head = self.tokens();
        if tok.category().has_words() {
            let mut all = head.clone();
            all.extend_from_slice(new);
            let Some(text) = tok.decode_raw(&all) else {
                return Vec::new();
            };
            let head_len = self.text().len();
            let Ok(spans) = tok.word_spans(&text) else {
                return if finished { vec![new.len()] } else { Vec::new() };
            };
            let ends: Vec<usize> = spans
                .into_iter()
                .map(|s| s.end)
                .filter(|&e| e > head_len && (e < text.len() || finished))
                .collect();
            let Some(starts) = super::token_start_offsets(tok, &all) else {
                return Vec::new();
            };
            (1..=new.len())
                .filter(|&j| {
                    let at = head.len() + j;
                    let offset = starts.get(at).copied().unwrap_or(text.len());
                    ends.contains(&offset)
                })
                .collect()
        } else {
            let mut out = Vec::new();
            let mut head = head;
            let mut head_text = self.text();
            let mut start = 0;
            for j in 1..=new.len() {
                if let Some(text) = decode_after(tok, &head, &head_text, &new[start..j]) {
                    head.extend_from_slice(&new[start..j]);
                    head_text.push_str(&text);
                    out.push(j);
                    start = j;
                }
            }
            out
        }
    }

    /// Drops leading words beyond `k`. The window may only start where its
    /// text encodes back to exactly its tokens; otherwise tokenization of
    /// the retained words would differ from the full context. Without such
    /// a start the window grows, up to `MAX_GROWTH * k` words, after which
    /// the last `k` words are kept.
    fn trim(&mut self, tok: &dyn Tokenizer) {
        let k = self.window.k() + usize::from(self.open_tail);
        if self.units.len() <= k {
            return;
        }
        let max_drop = self.units.len() - k;
        let drop = (1..=max_drop)
            .rev()
            .find(|&d| {
                let rest: Vec<TokenId> = self.units[d..]
                    .iter()
                    .flat_map(|u| u.tokens.iter().copied())
                    .collect();
                tok.decode_raw(&rest)
                    .and_then(|text| tok.encode(&text).ok())
                    .is_some_and(|back| back == rest)
            })
            .unwrap_or(if self.units.len() > MAX_GROWTH * k { max_drop } else { 0 });
        if drop > 0 {
            self.units.drain(..drop);
            self.relabel(tok);
        }
    }

    /// Recomputes word texts so they concatenate to the raw decode of the
    /// window, which changes for position-sensitive tokenizers when the
    /// leading word moves.
    fn relabel(&mut self, tok: &dyn Tokenizer) {
        let mut prefix: Vec<TokenId> = Vec::new();
        let mut prev = String::new();
        for unit in &mut self.units {
            prefix.extend_from_slice(&unit.tokens);
            match tok.decode_raw(&prefix) {
                Some(text) => {
                    unit.text = text.strip_prefix(prev.as_str()).unwrap_or(&text).to_string();
                    prev = text;
                }
                None => unit.text.clear(),
            }
        }
    }
}

/// Splits a raw token sequence into word units at token boundaries that
/// coincide with word ends of its decoded text.
fn word_units(tok: &dyn Tokenizer, ids: &[TokenId]) -> Vec<Unit> {
    let Some(text) = tok.decode_raw(ids) else {
        return vec![Unit {
            tokens: ids.to_vec(),
            text: tok.decode_lossy(ids),
        }];
    };
    let ends: Vec<usize> = match tok.word_spans(&text) {
        Ok(spans) => spans.into_iter().map(|s| s.end).collect(),
        Err(_) => vec![text.len()],
    };
    let starts = super::token_start_offsets(tok, ids).unwrap_or_default();
    let mut units = Vec::new();
    let mut start = 0;
    for j in 1..=ids.len() {
        let offset = starts.get(j).copied().unwrap_or(text.len());
        if j == ids.len() || ends.contains(&offset) {
            let from = starts.get(start).copied().unwrap_or(0);
            units.push(Unit {
                tokens: ids[start..j].to_vec(),
                text: text[from..offset].to_string(),
            });
            start = j;
        }
    }
    units
}

/// Byte offsets within `text` at which words of `tok` end when `text` follows
/// `head_text`. Ends at the very end of `text` count only when `finished`;
/// for tokenizers without words, an end also needs `lookahead_chars` of text
/// after it unless `finished`.
pub fn text_unit_ends(
    tok: &dyn Tokenizer,
    head_text: &str,
    text: &str,
    finished: bool,
) -> Result<Vec<usize>, TokenizerError> {
    let full = format!("{head_text}{text}");
    let head_len = head_text.len();
    let keep = |e: usize| e > head_len && (e < full.len() || finished);
    if tok.category().has_words() {
        return Ok(tok
            .word_spans(&full)?
            .into_iter()
            .map(|s| s.end)
            .filter(|&e| keep(e))
            .map(|e| e - head_len)
            .collect());
    }
    let ids = tok.encode(&full)?;
    // Later text can still re-split tokens that end close to the end.
    let lookahead = tok.lookahead_chars();
    let settled = |e: usize| finished || full[e..].chars().count() >= lookahead;
    let mut out = Vec::new();
    for j in 1..=ids.len() {
        let Some(e) = tok.decode_raw(&ids[..j]).map(|t| t.len()) else {
            continue;
        };
        if !(keep(e) && settled(e)) {
            continue;
        }
        if tok.encode(&full[..e]).is_ok_and(|back| back == ids[..j]) {
            out.push(e - head_len);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{BpeTokenizer, ByteTokenizer, PrefixSpaceTokenizer, WordTokenizer};

    fn k4() -> CodecWindow {
        CodecWindow::default()
    }

    #[test]
    fn window_must_be_positive() {
        assert_eq!(CodecWindow::new(0), Err(TokenizerError::EmptyWindow));
        assert_eq!(CodecWindow::default().k(), 4);
    }

    #[test]
    fn empty_context_decodes_plainly() {
        let tok = WordTokenizer::from_words("w", ["Hello"]).unwrap();
        let ids = tok.encode("Hello").unwrap();
        let text = decode_incremental(&tok, &[], &[], &ids, k4()).unwrap();
        assert_eq!(text.as_deref(), Some("Hello"));
    }

    #[test]
    fn position_sensitive_token_gains_its_space() {
        let tok = PrefixSpaceTokenizer::from_pieces("p", ["▁If", "▁so"]).unwrap();
        let x = tok.encode("If").unwrap();
        assert_eq!(tok.decode_raw(&x).as_deref(), Some("If"));
        let so = tok.encode("so").unwrap();
        let text = decode_incremental(&tok, &["so".to_string()], &so, &x, k4()).unwrap();
        assert_eq!(text.as_deref(), Some(" If"));
    }

    #[test]
    fn mismatched_window_is_rejected() {
        let tok = WordTokenizer::from_words("w", ["so", "no"]).unwrap();
        let so = tok.encode("so").unwrap();
        let err = decode_incremental(&tok, &["no".to_string()], &so, &[], k4());
        assert_eq!(err, Err(TokenizerError::WindowMismatch));
    }

    #[test]
    fn partial_character_is_not_decodable_in_context() {
        let tok = ByteTokenizer::new("b");
        let w = ContextWindow::from_text(&tok, "ab", k4()).unwrap();
        let zh = tok.encode("中").unwrap();
        assert_eq!(w.decode(&tok, &zh[..2]), None);
        assert_eq!(w.decode(&tok, &zh).as_deref(), Some("中"));
    }

    #[test]
    fn encode_with_empty_context_is_plain() {
        let tok = BpeTokenizer::from_words("c", ["abc"]).unwrap();
        let enc = encode_incremental(&tok, &[], "abc", k4()).unwrap();
        assert_eq!(enc.replaced, 0);
        assert_eq!(enc.tokens, tok.encode("abc").unwrap());
    }

    #[test]
    fn whitespace_sensitive_encode_matches_full_suffix() {
        let tok = WordTokenizer::from_words("w", ["the", " cat", " "]).unwrap();
        let enc = encode_incremental(&tok, &["the".to_string()], " cat", k4()).unwrap();
        let full = tok.encode("the cat").unwrap();
        let head = tok.encode("the").unwrap();
        assert_eq!(enc.replaced, 0);
        assert_eq!(enc.tokens, full[head.len()..]);
    }

    #[test]
    fn merge_across_boundary_is_reported() {
        let tok = WordTokenizer::from_words("w", ["walk", "walking", "ing"]).unwrap();
        let mut w = ContextWindow::from_text(&tok, "walk", k4()).unwrap();
        let enc = w.push_text(&tok, "ing").unwrap();
        assert_eq!(enc.replaced, 1);
        assert_eq!(enc.tokens, tok.encode("walking").unwrap());
        assert_eq!(w.tokens(), tok.encode("walking").unwrap());
        assert_eq!(w.text(), "walking");
    }

    #[test]
    fn window_keeps_last_k_words() {
        let tok = WordTokenizer::from_words("w", ["a", " b", " c", " d", " e", " f"]).unwrap();
        let w = ContextWindow::from_text(&tok, "a b c d e f", k4()).unwrap();
        assert_eq!(w.words(), [" c", " d", " e", " f"]);
        assert_eq!(w.tokens(), tok.encode(" c d e f").unwrap());
    }

    #[test]
    fn trimmed_window_relabels_position_sensitive_words() {
        let tok = PrefixSpaceTokenizer::from_pieces("p", ["▁a", "▁b", "▁c", "▁d", "▁e"]).unwrap();
        let w = ContextWindow::from_text(&tok, "a b c d e", k4()).unwrap();
        assert_eq!(w.words(), ["b", " c", " d", " e"]);
        assert_eq!(tok.decode_raw(&w.tokens()).unwrap(), w.text());
    }

    #[test]
    fn unit_ends_wait_for_next_word() {
        let tok = WordTokenizer::from_words("w", ["not", " the"]).unwrap();
        let w = ContextWindow::new(k4());
        let ids = tok.encode("not the").unwrap();
        assert_eq!(w.unit_ends(&tok, &ids[..1], false), Vec::<usize>::new());
        assert_eq!(w.unit_ends(&tok, &ids, false), vec![1]);
        assert_eq!(w.unit_ends(&tok, &ids, true), vec![1, 2]);
    }

    #[test]
    fn text_ends_of_opaque_tokenizer() {
        let tok = ByteTokenizer::new("b");
        let ends = text_unit_ends(&tok, "x", "a中", false).unwrap();
        assert_eq!(ends, vec![1]);
        let ends = text_unit_ends(&tok, "x", "a中", true).unwrap();
        assert_eq!(ends, vec![1, 4]);
    }
}
