use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::{TokenId, Tokenizer, TokenizerCategory, TokenizerError};

/// Splits text the way byte-level BPE models of the LLaMA-3 family
/// pre-tokenize: a letter run absorbs one leading non-letter, digits come in
/// groups of up to three, punctuation runs absorb one leading space.
fn pretokenizer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[^\r\n\p{L}\p{N}]?\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]+[\r\n]*|\s*[\r\n]+|\s+")
            .expect("static regex")
    })
}

/// Byte ranges of the pre-tokenized chunks of `text`, covering it exactly.
pub(crate) fn word_chunks(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut at = 0;
    for m in pretokenizer().find_iter(text) {
        if m.start() > at {
            out.push(at..m.start());
        }
        out.push(m.range());
        at = m.end();
    }
    if at < text.len() {
        out.push(at..text.len());
    }
    out
}

/// Word-level tokenizer with subword fallback. Each pre-tokenized chunk is a
/// word; a chunk present in the vocabulary becomes one token, otherwise it is
/// split by greedy longest match over the vocabulary.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    name: String,
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

impl WordTokenizer {
    pub fn new(name: impl Into<String>, vocab: Vec<String>) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (id, piece) in vocab.iter().enumerate() {
            if piece.is_empty() {
                return Err(TokenizerError::InvalidVocab("empty token".into()));
            }
            if index.insert(piece.clone(), id as TokenId).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("duplicate token {piece:?}")));
            }
        }
        for piece in &vocab {
            for c in piece.chars() {
                if !index.contains_key(c.encode_utf8(&mut [0; 4]) as &str) {
                    return Err(TokenizerError::InvalidVocab(format!(
                        "character {c:?} of {piece:?} has no single-character token"
                    )));
                }
            }
        }
        let max_piece_chars = vocab.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(WordTokenizer {
            name: name.into(),
            pieces: vocab,
            index,
            max_piece_chars,
        })
    }

    /// Vocabulary made of the given words followed by every character they use.
    pub fn from_words<'a>(
        name: impl Into<String>,
        words: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, TokenizerError> {
        let mut vocab: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let words: Vec<&str> = words.into_iter().collect();
        for w in &words {
            if !w.is_empty() && seen.insert(w.to_string()) {
                vocab.push(w.to_string());
            }
        }
        for w in &words {
            for c in w.chars() {
                let s = c.to_string();
                if seen.insert(s.clone()) {
                    vocab.push(s);
                }
            }
        }
        Self::new(name, vocab)
    }

    /// Canonical encoding together with the word id of every token.
    pub fn encode_with_word_ids(
        &self,
        text: &str,
    ) -> Result<Vec<(TokenId, usize)>, TokenizerError> {
        let mut out = Vec::new();
        for (word_id, chunk) in word_chunks(text).into_iter().enumerate() {
            let chunk = &text[chunk];
            if let Some(&id) = self.index.get(chunk) {
                out.push((id, word_id));
                continue;
            }
            let chars: Vec<(usize, char)> = chunk.char_indices().collect();
            let mut i = 0;
            while i < chars.len() {
                let longest = (1..=self.max_piece_chars.min(chars.len() - i))
                    .rev()
                    .find_map(|n| {
                        let start = chars[i].0;
                        let end = chars.get(i + n).map_or(chunk.len(), |c| c.0);
                        self.index.get(&chunk[start..end]).map(|&id| (id, n))
                    });
                match longest {
                    Some((id, n)) => {
                        out.push((id, word_id));
                        i += n;
                    }
                    None => return Err(TokenizerError::encoding(&self.name, &chunk[chars[i].0..])),
                }
            }
        }
        Ok(out)
    }
}

impl Tokenizer for WordTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn category(&self) -> TokenizerCategory {
        TokenizerCategory::WordIds
    }

    fn vocab_size(&self) -> usize {
        self.pieces.len() + 1
    }

    fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(|s| s.as_bytes())
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        Ok(self
            .encode_with_word_ids(text)?
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    fn decode_raw(&self, ids: &[TokenId]) -> Option<String> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.pieces.get(id as usize)?);
        }
        Some(out)
    }

    fn word_spans(&self, text: &str) -> Result<Vec<Range<usize>>, TokenizerError> {
        let encoded = self.encode_with_word_ids(text)?;
        let mut spans: Vec<Range<usize>> = Vec::new();
        let mut offset = 0;
        let mut current = None;
        for (id, word_id) in encoded {
            let len = self.pieces[id as usize].len();
            if current == Some(word_id) {
                spans.last_mut().expect("open word").end += len;
            } else {
                spans.push(offset..offset + len);
                current = Some(word_id);
            }
            offset += len;
        }
        Ok(spans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans_text(text: &str) -> Vec<&str> {
        word_chunks(text).into_iter().map(|r| &text[r]).collect()
    }

    #[test]
    fn chunks_follow_letter_runs() {
        assert_eq!(spans_text("Multi-tasking"), ["Multi", "-tasking"]);
        assert_eq!(spans_text("LLMs are not"), ["LLMs", " are", " not"]);
        assert_eq!(spans_text("a 12345 b."), ["a", " ", "123", "45", " b", "."]);
        assert_eq!(spans_text("x  y"), ["x", "  ", "y"]);
    }

    #[test]
    fn falls_back_to_longest_match() {
        let tok = WordTokenizer::from_words("w", ["walk", "ing", "wa"]).unwrap();
        let ids = tok.encode("walking").unwrap();
        let pieces: Vec<&str> = ids.iter().map(|&i| tok.pieces[i as usize].as_str()).collect();
        assert_eq!(pieces, ["walk", "ing"]);
    }

    #[test]
    fn unknown_character_fails_to_encode() {
        let tok = WordTokenizer::from_words("w", ["ab"]).unwrap();
        assert!(matches!(
            tok.encode("abc"),
            Err(TokenizerError::EncodingFailure { .. })
        ));
    }

    #[test]
    fn rejects_vocab_without_character_fallback() {
        assert!(WordTokenizer::new("w", vec!["ab".into(), "a".into()]).is_err());
        assert!(WordTokenizer::new("w", vec!["a".into(), "a".into()]).is_err());
    }
}
