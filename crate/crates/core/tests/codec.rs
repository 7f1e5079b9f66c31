mod common;

use lmfuse::tokenizer::{
    decode_incremental, encode_incremental, CodecWindow, ContextWindow, TokenId, Tokenizer,
};
use lmfuse::toy;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn char_cuts(text: &str) -> Vec<usize> {
    text.char_indices().map(|(i, _)| i).chain([text.len()]).collect()
}

/// Checks windowed decode and encode at one token split and one text split.
fn check_split(tok: &dyn Tokenizer, text: &str, p: usize, q: usize, cut: usize) {
    let ids = tok.encode(text).unwrap();
    let w = ContextWindow::from_tokens(tok, &ids[..p], CodecWindow::default());
    for end in [q, ids.len()] {
        assert_eq!(
            w.decode(tok, &ids[p..end]),
            common::full_decode_suffix(tok, &ids[..p], &ids[p..end]),
            "{} decode {text:?} split {p}..{end}",
            tok.name()
        );
    }
    let w = ContextWindow::from_text(tok, &text[..cut], CodecWindow::default()).unwrap();
    let enc = w.encode(tok, &text[cut..]).unwrap();
    assert!(
        common::full_encode_agrees(tok, &text[..cut], &text[cut..], enc.replaced, &enc.tokens),
        "{} encode {text:?} cut at {cut}: {enc:?}",
        tok.name()
    );
}

#[test]
fn windowed_codec_matches_full_context_on_random_splits() {
    let corpus = toy::sentence_corpus(500, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for tok in toy::tokenizers() {
        let tok = tok.as_ref();
        for _ in 0..2500 {
            let text = &corpus[rng.random_range(0..corpus.len())];
            let ids = tok.encode(text).unwrap();
            let p = rng.random_range(0..=ids.len());
            let q = rng.random_range(p..=ids.len());
            let cuts = char_cuts(text);
            let cut = cuts[rng.random_range(0..cuts.len())];
            check_split(tok, text, p, q, cut);
        }
    }
}

#[test]
fn streamed_window_decodes_like_full_context() {
    let corpus = toy::sentence_corpus(60, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for tok in toy::tokenizers() {
        let tok = tok.as_ref();
        for text in &corpus {
            let ids = tok.encode(text).unwrap();
            let mut w = ContextWindow::new(CodecWindow::default());
            let mut done = 0;
            let mut decoded = String::new();
            let mut pending: Vec<TokenId> = Vec::new();
            while done < ids.len() {
                let step = rng.random_range(1..=3).min(ids.len() - done);
                pending.extend_from_slice(&ids[done..done + step]);
                done += step;
                if let Some(s) = w.decode(tok, &pending) {
                    decoded.push_str(&s);
                    w.push_tokens(tok, &pending);
                    pending.clear();
                }
                assert!(w.words().len() <= 8 * CodecWindow::default().k() + 1);
            }
            assert!(pending.is_empty(), "{} {text:?}", tok.name());
            assert_eq!(tok.decode_raw(&ids).unwrap(), decoded, "{}", tok.name());
        }
    }
}

#[test]
fn push_text_tracks_full_encoding() {
    let corpus = toy::sentence_corpus(80, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for tok in toy::tokenizers() {
        let tok = tok.as_ref();
        for text in &corpus {
            let cuts = char_cuts(text);
            let mut w = ContextWindow::new(CodecWindow::default());
            let mut full: Vec<TokenId> = Vec::new();
            let mut at = 0;
            while at < text.len() {
                let end = cuts
                    .iter()
                    .copied()
                    .filter(|&c| c > at)
                    .nth(rng.random_range(0..4))
                    .unwrap_or(text.len());
                let enc = w.push_text(tok, &text[at..end]).unwrap();
                full.truncate(full.len() - enc.replaced);
                full.extend_from_slice(&enc.tokens);
                assert_eq!(full, tok.encode(&text[..end]).unwrap(), "{} {text:?}", tok.name());
                at = end;
            }
        }
    }
}

#[test]
fn free_functions_agree_with_window() {
    let tok = toy::word_tokenizer();
    let tok = tok.as_ref();
    let prev = tok.encode("LLMs are").unwrap();
    let w = ContextWindow::from_tokens(tok, &prev, CodecWindow::default());
    let new = tok.encode(" not").unwrap();
    let got = decode_incremental(tok, &w.words(), &w.tokens(), &new, w.window()).unwrap();
    assert_eq!(got.as_deref(), Some(" not"));
    let enc = encode_incremental(tok, &w.words(), " not", w.window()).unwrap();
    assert_eq!((enc.replaced, enc.tokens), (0, new));
}

fn alphabet_text() -> impl Strategy<Value = String> {
    let words: Vec<&'static str> = toy::WORDS.to_vec();
    prop::collection::vec(
        (prop::sample::select(words), prop::sample::select(vec![" ", " ", "", ", ", "  ", "."])),
        1..10,
    )
    .prop_map(|parts| parts.into_iter().map(|(w, sep)| format!("{w}{sep}")).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn incremental_equals_full_context(text in alphabet_text(), a in 0.0f64..=1.0, b in 0.0f64..=1.0, c in 0.0f64..=1.0) {
        for tok in toy::tokenizers() {
            let tok = tok.as_ref();
            let n = tok.encode(&text).unwrap().len();
            let p = (a * n as f64) as usize;
            let q = p + (b * (n - p) as f64) as usize;
            let cuts = char_cuts(&text);
            let cut = cuts[((c * (cuts.len() - 1) as f64) as usize).min(cuts.len() - 1)];
            check_split(tok, &text, p, q, cut);
        }
    }

    #[test]
    fn decodability_is_the_roundtrip_predicate(ids in prop::collection::vec(0u32..300, 0..8)) {
        for tok in toy::tokenizers() {
            let ids: Vec<TokenId> = ids.iter().map(|&i| i % tok.vocab_size() as u32).collect();
            let roundtrips = tok
                .decode_raw(&ids)
                .and_then(|t| tok.encode(&t).ok())
                .is_some_and(|back| back == ids);
            prop_assert_eq!(tok.decode(&ids).is_some(), roundtrips);
        }
    }

    #[test]
    fn encode_then_decode_is_identity(text in alphabet_text()) {
        for tok in toy::tokenizers() {
            let ids = tok.encode(&text).unwrap();
            prop_assert_eq!(tok.decode(&ids), Some(text.clone()));
        }
    }

    #[test]
    fn word_boundaries_partition_tokens(text in alphabet_text()) {
        for tok in toy::tokenizers().into_iter().filter(|t| t.category().has_words()) {
            let ids = tok.encode(&text).unwrap();
            let words = tok.word_boundaries(&ids).unwrap();
            let mut next = 0;
            for w in &words {
                prop_assert_eq!(w.first_token, next);
                prop_assert!(w.last_token >= w.first_token);
                next = w.last_token + 1;
            }
            prop_assert_eq!(next, ids.len());
            prop_assert_eq!(words.iter().map(|w| w.text.as_str()).collect::<String>(), text.clone());
        }
    }
}
