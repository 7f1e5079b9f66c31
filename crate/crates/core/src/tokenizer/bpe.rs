use std::collections::HashMap;
use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::{TokenId, Tokenizer, TokenizerCategory, TokenizerError};

/// Whitespace-delimited chunks; leading whitespace sticks to the following word.
fn chunker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\S+|\s+").expect("static regex"))
}

/// Character-level BPE over whitespace-delimited chunks. Tokens carry byte
/// offsets into the encoded text; words are recovered from those offsets.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    name: String,
    pieces: Vec<String>,
    index: HashMap<String, TokenId>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeTokenizer {
    pub fn new(
        name: impl Into<String>,
        vocab: Vec<String>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (id, piece) in vocab.iter().enumerate() {
            if piece.is_empty() {
                return Err(TokenizerError::InvalidVocab("empty token".into()));
            }
            if index.insert(piece.clone(), id as TokenId).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("duplicate token {piece:?}")));
            }
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.into_iter().enumerate() {
            let joined = format!("{left}{right}");
            for part in [&left, &right, &joined] {
                if !index.contains_key(part.as_str()) {
                    return Err(TokenizerError::InvalidVocab(format!(
                        "merge ({left:?}, {right:?}) refers to unknown token {part:?}"
                    )));
                }
            }
            ranks.entry((left, right)).or_insert(rank);
        }
        Ok(BpeTokenizer {
            name: name.into(),
            pieces: vocab,
            index,
            ranks,
        })
    }

    /// Builds merges so that each listed word, taken as a whole chunk,
    /// encodes to a single token. Words keep their leading whitespace.
    pub fn from_words<'a>(
        name: impl Into<String>,
        words: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, TokenizerError> {
        let name = name.into();
        let words: Vec<&str> = words.into_iter().filter(|w| !w.is_empty()).collect();
        let mut vocab: Vec<String> = Vec::new();
        for w in &words {
            for c in w.chars() {
                let s = c.to_string();
                if !vocab.contains(&s) {
                    vocab.push(s);
                }
            }
        }
        let mut merges: Vec<(String, String)> = Vec::new();
        let mut tok = Self::new(name.clone(), vocab.clone(), merges.clone())?;
        for w in words {
            let mut symbols = tok.merge_chunk(w);
            while symbols.len() > 1 {
                let right = symbols.remove(1);
                let left = std::mem::take(&mut symbols[0]);
                let joined = format!("{left}{right}");
                if !vocab.contains(&joined) {
                    vocab.push(joined.clone());
                }
                merges.push((left, right));
                symbols[0] = joined;
            }
            tok = Self::new(name.clone(), vocab.clone(), merges.clone())?;
        }
        Ok(tok)
    }

    pub fn merges(&self) -> Vec<(String, String)> {
        let mut out: Vec<_> = self.ranks.iter().map(|(k, &r)| (r, k.clone())).collect();
        out.sort();
        out.into_iter().map(|(_, k)| k).collect()
    }

    pub fn vocab(&self) -> &[String] {
        &self.pieces
    }

    /// Applies merges by ascending rank; characters are not checked here.
    fn merge_chunk(&self, chunk: &str) -> Vec<String> {
        let mut symbols: Vec<String> = chunk.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, pair)| {
                    self.ranks
                        .get(&(pair[0].clone(), pair[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Canonical encoding with the byte span of every token.
    pub fn encode_with_offsets(
        &self,
        text: &str,
    ) -> Result<Vec<(TokenId, Range<usize>)>, TokenizerError> {
        let mut out = Vec::new();
        for m in chunker().find_iter(text) {
            let mut offset = m.start();
            for symbol in self.merge_chunk(m.as_str()) {
                let id = *self
                    .index
                    .get(&symbol)
                    .ok_or_else(|| TokenizerError::encoding(&self.name, &text[offset..]))?;
                out.push((id, offset..offset + symbol.len()));
                offset += symbol.len();
            }
        }
        Ok(out)
    }
}

impl Tokenizer for BpeTokenizer {
    fn name(&self) -> &str {
        &self.name
    }

    fn category(&self) -> TokenizerCategory {
        TokenizerCategory::CharOffsets
    }

    fn vocab_size(&self) -> usize {
        self.pieces.len() + 1
    }

    fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(|s| s.as_bytes())
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        Ok(self
            .encode_with_offsets(text)?
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
        let mut spans: Vec<Range<usize>> = Vec::new();
        for (_, span) in self.encode_with_offsets(text)? {
            let starts_word = spans.is_empty()
                || (text[span.start..].starts_with(char::is_whitespace)
                    && !text[..span.start].ends_with(char::is_whitespace));
            if starts_word {
                spans.push(span);
            } else {
                spans.last_mut().expect("open word").end = span.end;
            }
        }
        Ok(spans)
    }
}
