//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use lmfuse::tokenizer::{TokenId, Tokenizer};

/// Full-context decode of `prev ++ new` minus the decode of `prev`, or
/// `None` when the full sequence does not roundtrip.
pub fn full_decode_suffix(tok: &dyn Tokenizer, prev: &[TokenId], new: &[TokenId]) -> Option<String> {
    let all: Vec<TokenId> = prev.iter().chain(new).copied().collect();
    let full = tok.decode(&all)?;
    let head = tok.decode_raw(prev)?;
    full.strip_prefix(head.as_str()).map(str::to_string)
}

/// Checks `encode(prev_text + new_text)` against the retraction contract.
pub fn full_encode_agrees(
    tok: &dyn Tokenizer,
    prev_text: &str,
    new_text: &str,
    replaced: usize,
    tokens: &[TokenId],
) -> bool {
    let full = tok.encode(&format!("{prev_text}{new_text}")).unwrap();
    let prefix = tok.encode(prev_text).unwrap();
    if replaced > prefix.len() {
        return false;
    }
    let mut rebuilt = prefix[..prefix.len() - replaced].to_vec();
    rebuilt.extend_from_slice(tokens);
    rebuilt == full
}
