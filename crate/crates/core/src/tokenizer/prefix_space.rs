use std::collections::HashMap;

use super::{TokenId, Tokenizer, TokenizerCategory, TokenizerError};

/// Word-boundary marker standing in for a space inside pieces.
pub const SPACE_MARK: char = '▁';

/// SentencePiece-style tokenizer whose decoding depends on position, like
/// the LLaMA-2 tokenizer: encoding prepends a dummy space, and decoding drops
/// the leading space of the sequence. The same piece `▁If` therefore decodes
/// to `If` at the start of a sequence and to ` If` after other tokens.
///
/// Pieces may carry the marker only as their first character, so
/// tokenization never crosses a word start.
#[derive(Debug, Clone)]
pub struct PrefixSpaceTokenizer {
    name: String,
    pieces: Vec<String>,
    surface: Vec<String>,
    index: HashMap<String, TokenId>,
    max_piece_chars: usize,
}

impl PrefixSpaceTokenizer {
    pub fn new(name: impl Into<String>, vocab: Vec<String>) -> Result<Self, TokenizerError> {
        let mut index = HashMap::with_capacity(vocab.len());
        for (id, piece) in vocab.iter().enumerate() {
            if piece.is_empty() {
                return Err(TokenizerError::InvalidVocab("empty token".into()));
            }
            if piece.chars().skip(1).any(|c| c == SPACE_MARK) {
                return Err(TokenizerError::InvalidVocab(format!(
                    "{piece:?}: {SPACE_MARK} may only start a piece"
                )));
            }
            if index.insert(piece.clone(), id as TokenId).is_some() {
                return Err(TokenizerError::InvalidVocab(format!("duplicate token {piece:?}")));
            }
        }
        let surface = vocab.iter().map(|p| p.replace(SPACE_MARK, " ")).collect();
        let max_piece_chars = vocab.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(PrefixSpaceTokenizer {
            name: name.into(),
            pieces: vocab,
            surface,
            index,
            max_piece_chars,
        })
    }

    /// Vocabulary of the given pieces plus the bare marker and every other
    /// character they use.
    pub fn from_pieces<'a>(
        name: impl Into<String>,
        pieces: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, TokenizerError> {
        let pieces: Vec<&str> = pieces.into_iter().filter(|p| !p.is_empty()).collect();
        let mut vocab: Vec<String> = vec![SPACE_MARK.to_string()];
        for p in &pieces {
            if !vocab.iter().any(|v| v == p) {
                vocab.push(p.to_string());
            }
        }
        for p in &pieces {
            for c in p.chars().filter(|&c| c != SPACE_MARK) {
                let s = c.to_string();
                if !vocab.contains(&s) {
                    vocab.push(s);
                }
            }
        }
        Self::new(name, vocab)
    }

    pub fn vocab(&self) -> &[String] {
        &self.pieces
    }
}

impl Tokenizer for PrefixSpaceTokenizer {
    fn lookahead_chars(&self) -> usize {
        self.max_piece_chars
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn category(&self) -> TokenizerCategory {
        TokenizerCategory::Opaque
    }

    fn vocab_size(&self) -> usize {
        self.pieces.len() + 1
    }

    fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.pieces.get(id as usize).map(|s| s.as_bytes())
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        if text.contains(SPACE_MARK) {
            return Err(TokenizerError::encoding(&self.name, text));
        }
        let marked: Vec<char> = std::iter::once(SPACE_MARK)
            .chain(text.chars().map(|c| if c == ' ' { SPACE_MARK } else { c }))
            .collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < marked.len() {
            let max = self.max_piece_chars.min(marked.len() - i);
            let hit = (1..=max).rev().find_map(|n| {
                // a piece never spans a word start past its first character
                if marked[i + 1..i + n].contains(&SPACE_MARK) {
                    return None;
                }
                buf.clear();
                buf.extend(&marked[i..i + n]);
                self.index.get(&buf).map(|&id| (id, n))
            });
            match hit {
                Some((id, n)) => {
                    out.push(id);
                    i += n;
                }
                None => {
                    let rest: String = marked[i..].iter().collect();
                    return Err(TokenizerError::encoding(&self.name, &rest));
                }
            }
        }
        Ok(out)
    }

    fn decode_raw(&self, ids: &[TokenId]) -> Option<String> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.surface.get(id as usize)?);
        }
        if out.starts_with(' ') {
            out.remove(0);
        }
        Some(out)
    }
}
