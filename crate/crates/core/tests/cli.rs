use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use lmfuse::backend::{Backend, RemoteBackend};
use lmfuse::toy;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lmfuse"))
}

fn toy_qa() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_qa/qa.toml")
}

#[test]
fn fuse_prints_the_result_and_writes_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let out = bin()
        .args(["fuse", "--config"])
        .arg(toy_qa())
        .args(["--prompt", "token 7. LLMs", "--mode", "cool", "--segment", "shortest", "--trace-out"])
        .arg(&trace)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["chosen_text"], " If red");
    assert_eq!(result["chosen_source"], "JOINT");
    let lines = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(lines.lines().count(), result["trace"].as_array().unwrap().len());

    let out = bin()
        .args(["fuse", "--config"])
        .arg(toy_qa())
        .args(["--prompt", "token 7. LLMs", "--mode", "single:A"])
        .output()
        .unwrap();
    let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(result["chosen_text"], " If");
}

#[test]
fn eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "--config"])
        .arg(toy_qa())
        .args(["--mode", "cool", "--mode", "rerank", "--jobs", "2", "--trace-out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("cool"), "{stdout}");
    assert!(dir.path().join("report.json").is_file());
    assert!(dir.path().join("traces/facts.cool.jsonl").is_file());
}

#[test]
fn exit_codes_distinguish_config_and_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[[backends]]\nid = \"x\"\nkind = \"ngram\"\n").unwrap();
    let out = bin().args(["eval", "--config"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tokenizer"));

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let remote = dir.path().join("remote.toml");
    std::fs::write(
        &remote,
        format!(
            "[[backends]]\nid = \"r\"\nkind = \"remote\"\ntokenizer = \"builtin:word\"\nendpoint = \"{endpoint}\"\ntimeout_secs = 0.5\n"
        ),
    )
    .unwrap();
    let out = bin()
        .args(["fuse", "--config"])
        .arg(&remote)
        .args(["--prompt", "the"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn served_mock_answers_the_protocol() {
    let mut child = bin()
        .args(["protocol-serve-mock", "--config"])
        .arg(toy_qa())
        .args(["--backend", "B", "--addr", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().rsplit(' ').next().unwrap().to_string();
    let remote = RemoteBackend::connect(&url, toy::bpe_tokenizer(), Duration::from_secs(5));
    let checked = remote.map(|r| {
        let s = r.open_session("token 7. If").unwrap();
        (r.model_id().to_string(), r.generate(&s, 1).unwrap().text_incremental)
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(checked.unwrap(), ("B".to_string(), " red".to_string()));
}

#[test]
fn vocab_overlap_lists_backend_pairs() {
    let out = bin()
        .args(["diag", "vocab-overlap", "--config"])
        .arg(toy_qa())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = stdout.trim().split('\t').collect();
    assert_eq!(&fields[..2], ["A", "B"]);
    let overlap: f64 = fields[2].parse().unwrap();
    assert!(overlap > 0.0 && overlap < 1.0);
}
