use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    BpeTokenizer, ByteTokenizer, PrefixSpaceTokenizer, SharedTokenizer, TokenizerCategory,
    TokenizerError, WordTokenizer,
};

/// On-disk toy tokenizer definition.
///
/// * `WORD_IDS`: word-level vocabulary, `merges` must be empty.
/// * `CHAR_OFFSETS`: character BPE, `merges` lists `[left, right]` pairs by rank.
/// * `OPAQUE` with an empty vocabulary: UTF-8 byte tokenizer.
/// * `OPAQUE` with a vocabulary: position-sensitive `▁`-prefixed pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    #[serde(default)]
    pub name: Option<String>,
    pub category: TokenizerCategory,
    #[serde(default)]
    pub vocab: Vec<String>,
    #[serde(default)]
    pub merges: Vec<(String, String)>,
}

impl VocabFile {
    pub fn build(&self, fallback_name: &str) -> Result<SharedTokenizer, TokenizerError> {
        let name = self.name.clone().unwrap_or_else(|| fallback_name.to_string());
        let tok: SharedTokenizer = match self.category {
            TokenizerCategory::WordIds => {
                if !self.merges.is_empty() {
                    return Err(TokenizerError::InvalidVocab(
                        "WORD_IDS tokenizers take no merges".into(),
                    ));
                }
                Arc::new(WordTokenizer::new(name, self.vocab.clone())?)
            }
            TokenizerCategory::CharOffsets => Arc::new(BpeTokenizer::new(
                name,
                self.vocab.clone(),
                self.merges.clone(),
            )?),
            TokenizerCategory::Opaque if self.vocab.is_empty() => Arc::new(ByteTokenizer::new(name)),
            TokenizerCategory::Opaque => {
                Arc::new(PrefixSpaceTokenizer::new(name, self.vocab.clone())?)
            }
        };
        Ok(tok)
    }
}

pub fn tokenizer_from_json(json: &str, fallback_name: &str) -> Result<SharedTokenizer, TokenizerError> {
    let file: VocabFile =
        serde_json::from_str(json).map_err(|e| TokenizerError::InvalidVocab(e.to_string()))?;
    file.build(fallback_name)
}

pub fn load_tokenizer(path: &Path) -> Result<SharedTokenizer, TokenizerError> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| TokenizerError::InvalidVocab(format!("{}: {e}", path.display())))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("tokenizer");
    tokenizer_from_json(&json, stem)
}
