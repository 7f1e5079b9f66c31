use std::path::{Path, PathBuf};

use lmfuse::harness::{
    run, EvalMode, HarnessError, ItemRecord, RunConfig, RunOptions, RunReport,
};

fn toy_qa() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy_qa/qa.toml")
}

fn in_dir(dir: &Path) -> RunOptions {
    RunOptions {
        output_dir: Some(dir.to_path_buf()),
        ..Default::default()
    }
}

const ARITHMETIC: &str = r#"
[fusion]
max_new_chars = 12
stop_strings = ["."]

[[backends]]
id = "A"
kind = "scripted"
tokenizer = "builtin:word"
default_nll = 2.0
piece_nlls = { " 7" = 0.1 }
scripts = [{ context = "so 2024", continuation = " is 7." }]

[[backends]]
id = "B"
kind = "scripted"
tokenizer = "builtin:bpe"
default_nll = 2.0
scripts = [{ context = "so 2024", continuation = " is 42." }]

[eval]
modes = ["single:A", "cool", "rerank", "cool+r"]

[[tasks]]
name = "arithmetic"
prompt_template = "{input}"
answer_pattern = '\d+'
examples = [{ input = "so 2024", answer = "7" }, { input = "if so", answer = "" }]
"#;

#[test]
fn scripted_arithmetic_reports_one_row_per_mode() {
    let config = RunConfig::parse(ARITHMETIC, PathBuf::from(".")).unwrap();
    let report = run(&config, &RunOptions::default()).unwrap();
    let rows: Vec<&str> = report.tasks[0].rows.iter().map(|r| r.mode.as_str()).collect();
    assert_eq!(rows, ["single:A", "cool", "rerank", "cool+r"]);
    assert_eq!(report.tasks[0].row("cool").unwrap().correct, 1);
    assert_eq!(report.tasks[0].row("rerank").unwrap().total, 2);
}

#[test]
fn missing_fields_are_named() {
    let without_tokenizer = ARITHMETIC.replacen("tokenizer = \"builtin:word\"\n", "", 1);
    let err = RunConfig::parse(&without_tokenizer, PathBuf::from(".")).unwrap_err();
    assert!(matches!(&err, HarnessError::Config(m) if m.contains("tokenizer")), "{err}");
    assert_eq!(err.exit_code(), 2);

    let remote = "[[backends]]\nid = \"r\"\nkind = \"remote\"\ntokenizer = \"builtin:word\"\n";
    let err = RunConfig::parse(remote, PathBuf::from(".")).unwrap_err();
    assert!(matches!(&err, HarnessError::Config(m) if m.contains("endpoint")), "{err}");

    let bad_mode = ARITHMETIC.replace("\"single:A\"", "\"single:Z\"");
    let config = RunConfig::parse(&bad_mode, PathBuf::from(".")).unwrap();
    assert!(matches!(run(&config, &RunOptions::default()), Err(HarnessError::Config(_))));
}

#[test]
fn fusion_beats_each_half_of_the_fact_table() {
    let config = RunConfig::load(&toy_qa()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run(&config, &in_dir(dir.path())).unwrap();
    let task = &report.tasks[0];
    let acc = |m: &str| task.row(m).unwrap().accuracy;
    let best_single = acc("single:A").max(acc("single:B"));
    assert!(acc("cool") >= best_single);
    assert!(acc("cool+r") >= best_single);
    assert!(acc("cool+r") >= acc("rerank"));
    assert_eq!(acc("cool"), 1.0);
}

#[test]
fn accuracies_recompute_from_the_item_log() {
    let config = RunConfig::load(&toy_qa()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    run(&config, &in_dir(dir.path())).unwrap();
    let persisted: RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let items: Vec<ItemRecord> = std::fs::read_to_string(dir.path().join("items.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(RunReport::from_items(&items), persisted.tasks);
    for row in &persisted.tasks[0].rows {
        let mine: Vec<&ItemRecord> = items.iter().filter(|i| i.mode == row.mode).collect();
        let correct = mine.iter().filter(|i| i.correct).count();
        assert_eq!((row.correct, row.total), (correct, mine.len()));
        assert_eq!(row.accuracy, correct as f64 / mine.len() as f64);
    }
    for trace in &persisted.trace_files {
        assert!(dir.path().join(trace).is_file());
    }
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical_with_any_parallelism() {
    let config = RunConfig::load(&toy_qa()).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    run(&config, &in_dir(first.path())).unwrap();
    let parallel = RunOptions {
        jobs: Some(4),
        ..in_dir(second.path())
    };
    run(&config, &parallel).unwrap();
    let a = snapshot(first.path());
    assert!(a.len() >= 5);
    assert_eq!(a, snapshot(second.path()));
}

#[test]
fn seed_shuffles_before_truncating_the_corpus() {
    let text = std::fs::read_to_string(toy_qa()).unwrap().replace(
        "corpus = \"facts_a.txt\"",
        "corpus = \"facts_a.txt\"\nmax_lines = 3",
    );
    let config = RunConfig::parse(&text, toy_qa().parent().unwrap().to_path_buf()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let options = |seed| RunOptions {
        modes: vec![EvalMode::Single("A".into())],
        seed,
        ..in_dir(dir.path())
    };
    let runs: Vec<String> = [None, Some(1), Some(1), Some(2), Some(3)]
        .into_iter()
        .map(|seed| {
            let report = run(&config, &options(seed)).unwrap();
            serde_json::to_string(&report.tasks).unwrap()
        })
        .collect();
    assert_eq!(runs[1], runs[2]);
    assert!(runs.iter().any(|r| r != &runs[0]), "seeds never changed the training lines");
}

#[test]
fn modes_parse_from_strings() {
    assert_eq!("single:A".parse::<EvalMode>().unwrap(), EvalMode::Single("A".into()));
    assert_eq!("cool+r".parse::<EvalMode>().unwrap().to_string(), "cool+r");
    assert!("single:".parse::<EvalMode>().is_err());
    assert!("beam".parse::<EvalMode>().is_err());
}
