use super::{TokenId, Tokenizer, TokenizerCategory, TokenizerError};

/// One token per UTF-8 byte. Prefixes that split a multi-byte character do
/// not decode.
#[derive(Debug, Clone)]
pub struct ByteTokenizer {
    name: String,
    table: Vec<[u8; 1]>,
}

impl ByteTokenizer {
    pub fn new(name: impl Into<String>) -> Self {
        ByteTokenizer {
            name: name.into(),
            table: (0..=255u8).map(|b| [b]).collect(),
        }
    }
}

impl Tokenizer for ByteTokenizer {
    fn lookahead_chars(&self) -> usize {
        1
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn category(&self) -> TokenizerCategory {
        TokenizerCategory::Opaque
    }

    fn vocab_size(&self) -> usize {
        257
    }

    fn piece(&self, id: TokenId) -> Option<&[u8]> {
        self.table.get(id as usize).map(|b| b.as_slice())
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        Ok(text.bytes().map(TokenId::from).collect())
    }

    fn decode_raw(&self, ids: &[TokenId]) -> Option<String> {
        let bytes = ids
            .iter()
            .map(|&id| u8::try_from(id).ok())
            .collect::<Option<Vec<u8>>>()?;
        String::from_utf8(bytes).ok()
    }
}
