use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use lmfuse::backend::server::BackgroundServer;
use lmfuse::backend::{
    Backend, BackendError, NgramBackend, RemoteBackend, Script, ScriptedBackend, SessionId,
    SharedBackend, RETRIES,
};
use lmfuse::engine::{fuse, FusionConfig, FusionMode};
use lmfuse::segmenter::SegmentMode;
use lmfuse::tokenizer::CodecWindow;
use lmfuse::toy;

const TIMEOUT: Duration = Duration::from_secs(10);

fn ngrams() -> Vec<SharedBackend> {
    let corpus = toy::sentence_corpus(300, 21);
    toy::tokenizers()
        .into_iter()
        .map(|tok| {
            let id = format!("ngram-{}", tok.name());
            Arc::new(
                NgramBackend::train(id, tok, corpus.iter().map(String::as_str), 0.5, CodecWindow::default())
                    .unwrap(),
            ) as SharedBackend
        })
        .collect()
}

fn scripted() -> SharedBackend {
    let scripts = vec![Script {
        context: "LLMs are".into(),
        continuation: " not only ones who can".into(),
    }];
    Arc::new(ScriptedBackend::scripted(
        "scripted",
        toy::word_tokenizer(),
        scripts,
        &[(" not".to_string(), 0.25)].into(),
        1.5,
        CodecWindow::default(),
    ))
}

fn served(b: &SharedBackend) -> (BackgroundServer, SharedBackend) {
    let server = BackgroundServer::start(b.clone(), "127.0.0.1:0").unwrap();
    let remote = RemoteBackend::connect(&server.url(), b.tokenizer().clone(), TIMEOUT).unwrap();
    (server, Arc::new(remote))
}

/// Runs the same call sequence against a backend and records observations.
fn exercise(b: &dyn Backend, prompt: &str) -> Vec<String> {
    let mut log = Vec::new();
    let s = b.open_session(prompt).unwrap();
    let f = b.fork(&s).unwrap();
    let g = b.generate(&f, 5).unwrap();
    log.push(format!("{:?} {:?} {:?} {}", g.tokens, g.nlls, g.text_incremental, g.eos));
    for text in [" the sky", " blue", "中文"] {
        log.push(format!("{:?}", b.score_text(&s, text)));
    }
    b.append_text(&s, " is").unwrap();
    let g = b.generate(&s, 3).unwrap();
    log.push(format!("{:?} {:?} {:?}", g.tokens, g.nlls, g.text_incremental));
    b.close(&f).unwrap();
    b.close(&s).unwrap();
    log
}

#[test]
fn remote_backends_mirror_local_ones() {
    let mut all = ngrams();
    all.push(scripted());
    for local in all {
        let (_server, remote) = served(&local);
        assert_eq!(remote.model_id(), local.model_id());
        for prompt in ["LLMs are", "the sky is", "中文 模型"] {
            assert_eq!(
                exercise(local.as_ref(), prompt),
                exercise(remote.as_ref(), prompt),
                "{} {prompt:?}",
                local.model_id()
            );
        }
    }
}

#[test]
fn fusion_over_the_wire_matches_local_fusion() {
    let local = ngrams();
    let servers: Vec<_> = local.iter().map(served).collect();
    let remote: Vec<SharedBackend> = servers.iter().map(|(_, r)| r.clone()).collect();
    for mode in [FusionMode::Cool, FusionMode::CoolPlusR] {
        for segment_mode in [SegmentMode::Shortest, SegmentMode::Aligned] {
            let config = FusionConfig {
                mode,
                segment_mode,
                max_new_chars: 30,
                ..Default::default()
            };
            for prompt in ["LLMs are", "the sky"] {
                let a = fuse(prompt, &local, &config).unwrap();
                let b = fuse(prompt, &remote, &config).unwrap();
                assert_eq!(a.trace_jsonl(), b.trace_jsonl());
                assert_eq!(a.chosen_text, b.chosen_text);
            }
        }
    }
}

#[test]
fn errors_keep_their_kind_across_the_wire() {
    let local = scripted();
    let (_server, remote) = served(&local);
    for b in [local.as_ref(), remote.as_ref()] {
        let missing = SessionId("nope".into());
        assert!(matches!(b.generate(&missing, 1), Err(BackendError::SessionNotFound(_))));
        assert!(matches!(b.close(&missing), Err(BackendError::SessionNotFound(_))));
        let s = b.open_session("LLMs are").unwrap();
        assert_eq!(b.score_text(&s, ""), Err(BackendError::EmptySegment));
        assert!(b.score_text(&s, "QQ").unwrap_err().is_encoding_failure());
        assert!(matches!(b.generate(&s, 0), Err(BackendError::BadRequest(_))));
        while !b.generate(&s, 4).unwrap().eos {}
        assert_eq!(b.append_text(&s, " x"), Err(BackendError::SessionFinished));
        assert_eq!(b.generate(&s, 1), Err(BackendError::SessionFinished));
    }
}

#[test]
fn malformed_requests_get_json_error_bodies() {
    let (server, _) = served(&scripted());
    let client = reqwest::blocking::Client::new();
    let r = client
        .post(format!("{}/v1/sessions", server.url()))
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(r.status(), 400);
    assert_eq!(r.json::<serde_json::Value>().unwrap(), serde_json::json!({"error": "bad_request"}));
    let r = client
        .post(format!("{}/v1/sessions/none/next", server.url()))
        .json(&serde_json::json!({"n": 1}))
        .send()
        .unwrap();
    assert_eq!(r.status(), 404);
    assert_eq!(r.json::<serde_json::Value>().unwrap()["error"], "session_not_found");
    let info: serde_json::Value = client
        .get(format!("{}/v1/model", server.url()))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(info["model_id"], "scripted");
    assert_eq!(info["tokenizer_category"], "WORD_IDS");
}

#[test]
fn unreachable_backend_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = RemoteBackend::connect(&url, toy::word_tokenizer(), Duration::from_millis(500)).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)), "{err:?}");
}

#[test]
fn server_errors_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let app = axum::Router::new().fallback(move || {
        counter.fetch_add(1, Ordering::SeqCst);
        async { axum::http::StatusCode::INTERNAL_SERVER_ERROR }
    });
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    runtime.spawn(async move { axum::serve(listener, app).await });
    let err = RemoteBackend::connect(&url, toy::word_tokenizer(), TIMEOUT).unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)));
    assert_eq!(hits.load(Ordering::SeqCst), RETRIES + 1);
}

#[test]
fn mismatched_tokenizer_is_rejected() {
    let (server, _) = served(&scripted());
    let err = RemoteBackend::connect(&server.url(), toy::byte_tokenizer(), TIMEOUT).unwrap_err();
    assert!(matches!(err, BackendError::Incompatible(_)));
}

#[test]
fn forks_do_not_disturb_their_parent() {
    for b in ngrams() {
        let s = b.open_session("the sky").unwrap();
        let f = b.fork(&s).unwrap();
        let before = b.score_text(&s, " is blue").unwrap();
        b.append_text(&f, " red").unwrap();
        b.generate(&f, 7).unwrap();
        assert_eq!(b.score_text(&s, " is blue").unwrap(), before);
        let g1 = b.generate(&s, 4).unwrap();
        let fresh = b.open_session("the sky").unwrap();
        assert_eq!(b.generate(&fresh, 4).unwrap(), g1, "{}", b.model_id());
    }
}

#[test]
fn scoring_agrees_with_generation() {
    for b in ngrams() {
        let tok = b.tokenizer().clone();
        for prompt in toy::sentence_corpus(20, 4) {
            let s = b.open_session(&prompt).unwrap();
            let f = b.fork(&s).unwrap();
            let g = b.generate(&f, 6).unwrap();
            if g.eos || g.text_incremental.is_empty() {
                continue;
            }
            let full = tok.encode(&format!("{prompt}{}", g.text_incremental)).unwrap();
            let base = tok.encode(&prompt).unwrap();
            let canonical = full.starts_with(&base) && full[base.len()..] == g.tokens[..];
            if !canonical {
                continue;
            }
            let score = b.score_text(&s, &g.text_incremental).unwrap();
            assert_eq!(score.token_count, g.tokens.len());
            let sum: f64 = g.nlls.iter().sum();
            assert!((score.nll_sum - sum).abs() <= 1e-9 * sum.abs().max(1.0), "{}", b.model_id());
        }
    }
}

#[test]
fn appending_equals_opening_with_the_longer_prompt() {
    for b in ngrams() {
        for line in toy::sentence_corpus(30, 9) {
            let cut = line.char_indices().nth(line.chars().count() / 2).map_or(0, |(i, _)| i);
            let (head, tail) = line.split_at(cut);
            let s = b.open_session(head).unwrap();
            b.append_text(&s, tail).unwrap();
            let rebuilt = b.open_session(&line).unwrap();
            let probe = " the sky";
            assert_eq!(b.score_text(&s, probe), b.score_text(&rebuilt, probe), "{line:?}");
            assert_eq!(b.generate(&s, 5), b.generate(&rebuilt, 5), "{line:?}");
        }
    }
}
