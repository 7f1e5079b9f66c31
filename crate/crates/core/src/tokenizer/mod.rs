//! Uniform tokenizer abstraction over heterogeneous vocabularies.
//!
//! Tokenizers fall into three categories by how much boundary information
//! they expose:
//!
//! * [`TokenizerCategory::WordIds`]: every decoded text maps to an ordered
//!   word list, each word to a contiguous token range.
//! * [`TokenizerCategory::CharOffsets`]: every token carries the byte span it
//!   decodes to; words are recovered by grouping offsets on whitespace.
//! * [`TokenizerCategory::Opaque`]: only encode/decode are available.
//!
//! Decodability is the roundtrip predicate: a token sequence is decodable iff
//! re-encoding its decoded text yields the same sequence. Comparisons are
//! byte-exact; there is no Unicode normalization anywhere in this crate.

mod bpe;
mod bytes;
mod codec;
mod prefix_space;
mod vocab_file;
mod word;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::BpeTokenizer;
pub use bytes::ByteTokenizer;
pub use codec::{
    decode_incremental, encode_incremental, text_unit_ends, CodecWindow, ContextWindow,
    IncrementalEncoding,
};
pub use prefix_space::PrefixSpaceTokenizer;
pub use vocab_file::{load_tokenizer, tokenizer_from_json, VocabFile};
pub use word::WordTokenizer;

pub type TokenId = u32;

/// Shared handle to a tokenizer; tokenizers are immutable after construction.
pub type SharedTokenizer = Arc<dyn Tokenizer>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TokenizerCategory {
    WordIds,
    CharOffsets,
    Opaque,
}

impl TokenizerCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenizerCategory::WordIds => "WORD_IDS",
            TokenizerCategory::CharOffsets => "CHAR_OFFSETS",
            TokenizerCategory::Opaque => "OPAQUE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "WORD_IDS" => Some(TokenizerCategory::WordIds),
            "CHAR_OFFSETS" => Some(TokenizerCategory::CharOffsets),
            "OPAQUE" => Some(TokenizerCategory::Opaque),
            _ => None,
        }
    }

    /// Whether tokenizers of this category expose word boundaries.
    pub fn has_words(self) -> bool {
        !matches!(self, TokenizerCategory::Opaque)
    }
}

impl fmt::Display for TokenizerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("tokenizer `{tokenizer}` cannot encode {snippet:?}")]
    EncodingFailure { tokenizer: String, snippet: String },
    #[error("token sequence is not decodable")]
    NotDecodable,
    #[error("tokenizer `{0}` does not expose word boundaries")]
    UnsupportedCategory(String),
    #[error("window tokens do not decode to the window words")]
    WindowMismatch,
    #[error("token id {id} is out of range for a vocabulary of {vocab_size}")]
    InvalidToken { id: TokenId, vocab_size: usize },
    #[error("codec window must retain at least one word")]
    EmptyWindow,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
}

impl TokenizerError {
    pub(crate) fn encoding(tokenizer: &str, text: &str) -> Self {
        let snippet: String = text.chars().take(24).collect();
        TokenizerError::EncodingFailure {
            tokenizer: tokenizer.to_string(),
            snippet,
        }
    }
}

/// Token ids tagged with the tokenizer they belong to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokenizer: String,
    pub ids: Vec<TokenId>,
}

impl TokenSeq {
    /// Validates every id against the tokenizer's vocabulary.
    pub fn new(tokenizer: &dyn Tokenizer, ids: Vec<TokenId>) -> Result<Self, TokenizerError> {
        let vocab_size = tokenizer.vocab_size();
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(TokenizerError::InvalidToken { id, vocab_size });
        }
        Ok(TokenSeq {
            tokenizer: tokenizer.name().to_string(),
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One word of a decoded token sequence with its inclusive token range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub first_token: usize,
    pub last_token: usize,
}

pub trait Tokenizer: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    fn category(&self) -> TokenizerCategory;

    /// Number of ids, including the end-of-sequence id.
    fn vocab_size(&self) -> usize;

    /// The end-of-sequence id is always the last id of the vocabulary.
    fn eos_id(&self) -> TokenId {
        (self.vocab_size() - 1) as TokenId
    }

    /// Surface bytes of a regular token; `None` for eos and out-of-range ids.
    fn piece(&self, id: TokenId) -> Option<&[u8]>;

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError>;

    /// Decodes without the roundtrip check. `None` when the ids are invalid
    /// or their bytes are not UTF-8.
    fn decode_raw(&self, ids: &[TokenId]) -> Option<String>;

    /// Byte spans of the words of `text`, in order and covering it.
    fn word_spans(&self, _text: &str) -> Result<Vec<Range<usize>>, TokenizerError> {
        Err(TokenizerError::UnsupportedCategory(self.name().to_string()))
    }

    /// Roundtrip-checked decode: text iff `encode(text) == ids`.
    fn decode(&self, ids: &[TokenId]) -> Option<String> {
        let text = self.decode_raw(ids)?;
        match self.encode(&text) {
            Ok(back) if back == ids => Some(text),
            _ => None,
        }
    }

    /// Best-effort decode that never fails; invalid bytes become U+FFFD.
    fn decode_lossy(&self, ids: &[TokenId]) -> String {
        if let Some(text) = self.decode_raw(ids) {
            return text;
        }
        let mut bytes = Vec::new();
        for &id in ids {
            if let Some(piece) = self.piece(id) {
                bytes.extend_from_slice(piece);
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Characters of text past a token cut that can still move the cut. A
    /// cut followed by at least this many characters is final.
    fn lookahead_chars(&self) -> usize {
        self.pieces()
            .iter()
            .map(|p| String::from_utf8_lossy(p).chars().count())
            .max()
            .unwrap_or(1)
    }

    /// Every token string of the vocabulary except eos.
    fn pieces(&self) -> Vec<Vec<u8>> {
        (0..self.vocab_size() as TokenId)
            .filter_map(|id| self.piece(id).map(<[u8]>::to_vec))
            .collect()
    }

    fn word_boundaries(&self, ids: &[TokenId]) -> Result<Vec<Word>, TokenizerError> {
        if !self.category().has_words() {
            return Err(TokenizerError::UnsupportedCategory(self.name().to_string()));
        }
        let text = self.decode(ids).ok_or(TokenizerError::NotDecodable)?;
        let spans = self.word_spans(&text)?;
        let starts = token_start_offsets(self, ids).ok_or(TokenizerError::NotDecodable)?;
        let mut words = Vec::with_capacity(spans.len());
        let mut tok = 0;
        for span in spans {
            let first = tok;
            while tok < ids.len() && starts[tok] < span.end {
                tok += 1;
            }
            if tok == first {
                // the span lies inside a token that started in an earlier word
                if let Some(prev) = words.last_mut() {
                    let prev: &mut Word = prev;
                    prev.text.push_str(&text[span]);
                }
                continue;
            }
            words.push(Word {
                text: text[span].to_string(),
                first_token: first,
                last_token: tok - 1,
            });
        }
        Ok(words)
    }
}

/// Byte offset at which each token starts in the raw decode of `ids`.
pub(crate) fn token_start_offsets<T: Tokenizer + ?Sized>(
    tokenizer: &T,
    ids: &[TokenId],
) -> Option<Vec<usize>> {
    (0..ids.len())
        .map(|j| tokenizer.decode_raw(&ids[..j]).map(|s| s.len()))
        .collect()
}

/// Fraction of token strings shared by two vocabularies: |a ∩ b| / |a ∪ b|.
pub fn vocab_overlap(a: &dyn Tokenizer, b: &dyn Tokenizer) -> f64 {
    use std::collections::HashSet;
    let left: HashSet<Vec<u8>> = a.pieces().into_iter().collect();
    let right: HashSet<Vec<u8>> = b.pieces().into_iter().collect();
    let union = left.union(&right).count();
    if union == 0 {
        return 1.0;
    }
    left.intersection(&right).count() as f64 / union as f64
}
