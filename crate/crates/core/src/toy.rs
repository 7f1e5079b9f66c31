//! Built-in toy tokenizers and corpora.
//!
//! The four tokenizers cover every boundary category and disagree on where
//! words split, so they exercise alignment and incremental coding the same
//! way real heterogeneous vocabularies do. Everything is deterministic.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tokenizer::{
    BpeTokenizer, ByteTokenizer, PrefixSpaceTokenizer, SharedTokenizer, WordTokenizer,
};

pub const WORDS: &[&str] = &[
    "the", "a", "LLMs", "are", "not", "only", "ones", "who", "that", "can", "be", "used", "for",
    "this", "purpose", "trained", "on", "vast", "datasets", "include", "wide", "variety", "of",
    "human", "text", "models", "language", "walking", "talking", "is", "it", "if", "If", "so",
    "then", "we", "they", "answer", "question", "blue", "red", "green", "sky", "grass", "apple",
    "Multi-tasking", "well-known", "state-of-the-art", "42", "2024", "7", "中文", "模型", "café",
    "naïve", "über", "fusion", "segment", "token", "tokens", "perplexity", "averaged", "winner",
];

const PUNCT: &[&str] = &[".", ",", "?", "!", ":"];

/// Every character the toy corpora may contain.
fn alphabet() -> Vec<String> {
    let mut chars: Vec<String> = Vec::new();
    let sources = WORDS.iter().chain(PUNCT).chain([&" "]);
    for w in sources {
        for c in w.chars() {
            let s = c.to_string();
            if !chars.contains(&s) {
                chars.push(s);
            }
        }
    }
    chars
}

/// Word-level tokenizer exposing word ids. Short words get whole tokens,
/// with and without a leading space; longer ones fall back to pieces.
pub fn word_tokenizer() -> SharedTokenizer {
    let mut vocab: Vec<String> = Vec::new();
    for w in WORDS.iter().filter(|w| w.chars().count() <= 5) {
        vocab.push(w.to_string());
        vocab.push(format!(" {w}"));
    }
    for piece in ["ing", "ed", "er", "tion", "-", "state", "of", "art", "data", "sets"] {
        if !vocab.iter().any(|v| v == piece) {
            vocab.push(piece.to_string());
        }
    }
    for p in PUNCT {
        if !vocab.iter().any(|v| v == p) {
            vocab.push(p.to_string());
        }
    }
    for c in alphabet() {
        if !vocab.contains(&c) {
            vocab.push(c);
        }
    }
    Arc::new(WordTokenizer::new("word", vocab).expect("toy vocabulary"))
}

/// BPE tokenizer exposing character offsets. Merges cover every other
/// listed word plus a few shared suffixes.
pub fn bpe_tokenizer() -> SharedTokenizer {
    let mut words: Vec<String> = alphabet();
    for (i, w) in WORDS.iter().enumerate() {
        if i % 2 == 0 {
            words.push(w.to_string());
            words.push(format!(" {w}"));
        }
    }
    for piece in ["ing", "ed", " th", " a", "er", "s"] {
        words.push(piece.to_string());
    }
    let refs: Vec<&str> = words.iter().map(String::as_str).collect();
    Arc::new(BpeTokenizer::from_words("bpe", refs).expect("toy vocabulary"))
}

pub fn byte_tokenizer() -> SharedTokenizer {
    Arc::new(ByteTokenizer::new("bytes"))
}

/// Position-sensitive tokenizer with `▁`-prefixed pieces for the odd-indexed
/// words and short subword pieces, so many words span several tokens.
pub fn prefix_space_tokenizer() -> SharedTokenizer {
    let mut pieces: Vec<String> = Vec::new();
    for (i, w) in WORDS.iter().enumerate() {
        if i % 2 == 1 && !w.contains(' ') {
            pieces.push(format!("▁{w}"));
        }
    }
    for piece in ["ing", "ed", "er", "s", "▁t", "▁a", "th", "no", "▁no"] {
        pieces.push(piece.to_string());
    }
    for c in alphabet().into_iter().filter(|c| c != " ") {
        pieces.push(format!("▁{c}"));
        pieces.push(c);
    }
    let refs: Vec<&str> = pieces.iter().map(String::as_str).collect();
    Arc::new(PrefixSpaceTokenizer::from_pieces("prefix", refs).expect("toy vocabulary"))
}

/// The four toy tokenizers: word ids, char offsets, bytes, prefix space.
pub fn tokenizers() -> Vec<SharedTokenizer> {
    vec![
        word_tokenizer(),
        bpe_tokenizer(),
        byte_tokenizer(),
        prefix_space_tokenizer(),
    ]
}

/// Random sentences over [`WORDS`]: mostly single spaces, occasional
/// punctuation, CJK words sometimes glued together.
pub fn sentence_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..=12);
            let mut s = String::new();
            for i in 0..len {
                let w = WORDS.choose(&mut rng).expect("non-empty");
                let glue = i > 0 && !(w.chars().all(|c| c > '\u{2E80}') && rng.random_bool(0.5));
                if glue {
                    s.push(' ');
                }
                s.push_str(w);
                if rng.random_bool(0.1) {
                    s.push_str(PUNCT.choose(&mut rng).expect("non-empty"));
                }
            }
            s
        })
        .collect()
}
