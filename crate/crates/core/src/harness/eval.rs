use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::task::{extract_answer, TaskSpec};
use super::HarnessError;
use crate::backend::SharedBackend;
use crate::engine::{fuse, greedy_continuation, FusionConfig, FusionMode, TraceEvent};
use crate::segmenter::SegmentMode;

/// A row of the comparison: one model alone or one fusion mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalMode {
    Single(String),
    Fusion(FusionMode),
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.strip_prefix("single:") {
            Some("") => Err("single: needs a backend id".into()),
            Some(id) => Ok(EvalMode::Single(id.to_string())),
            None => s.parse().map(EvalMode::Fusion),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Single(id) => write!(f, "single:{id}"),
            EvalMode::Fusion(m) => m.fmt(f),
        }
    }
}

/// Command-line overrides for a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub modes: Vec<EvalMode>,
    pub segment: Option<SegmentMode>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub task: String,
    pub mode: String,
    pub index: usize,
    pub input: String,
    pub gold: String,
    pub generation: String,
    pub answer: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub rows: Vec<ModeRow>,
}

impl TaskReport {
    pub fn row(&self, mode: &str) -> Option<&ModeRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tasks: Vec<TaskReport>,
    /// Item log and trace files, relative to the output directory.
    pub items_file: Option<PathBuf>,
    pub trace_files: Vec<PathBuf>,
}

impl RunReport {
    /// Aggregates item records into per-task rows, keeping first-seen order
    /// of tasks and modes.
    pub fn from_items(items: &[ItemRecord]) -> Vec<TaskReport> {
        let mut tasks: Vec<TaskReport> = Vec::new();
        for item in items {
            let pos = match tasks.iter().position(|t| t.task == item.task) {
                Some(p) => p,
                None => {
                    tasks.push(TaskReport {
                        task: item.task.clone(),
                        rows: Vec::new(),
                    });
                    tasks.len() - 1
                }
            };
            let rows = &mut tasks[pos].rows;
            let row = match rows.iter().position(|r| r.mode == item.mode) {
                Some(p) => &mut rows[p],
                None => {
                    rows.push(ModeRow {
                        mode: item.mode.clone(),
                        correct: 0,
                        total: 0,
                        accuracy: 0.0,
                    });
                    rows.last_mut().expect("just pushed")
                }
            };
            row.total += 1;
            row.correct += usize::from(item.correct);
            row.accuracy = row.correct as f64 / row.total as f64;
        }
        tasks
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<24} {:<20} {:>9} {:>9}\n", "task", "mode", "correct", "accuracy");
        for t in &self.tasks {
            for r in &t.rows {
                out.push_str(&format!(
                    "{:<24} {:<20} {:>4}/{:<4} {:>9.4}\n",
                    t.task, r.mode, r.correct, r.total, r.accuracy
                ));
            }
        }
        out
    }
}

/// One trace event tagged with the item it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub item: usize,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub items: Vec<ItemRecord>,
    /// Trace lines per (task, mode).
    pub traces: BTreeMap<(String, String), Vec<TraceLine>>,
}

impl RunConfig {
    /// Modes to run: explicit overrides, then the config, then every single
    /// model followed by the three fusion modes.
    pub fn modes(&self, options: &RunOptions) -> Result<Vec<EvalMode>, HarnessError> {
        let modes = if !options.modes.is_empty() {
            options.modes.clone()
        } else if !self.eval.modes.is_empty() {
            self.eval
                .modes
                .iter()
                .map(|m| m.parse().map_err(HarnessError::Config))
                .collect::<Result<_, _>>()?
        } else {
            self.backends
                .iter()
                .map(|b| EvalMode::Single(b.id.clone()))
                .chain([FusionMode::Cool, FusionMode::Rerank, FusionMode::CoolPlusR].map(EvalMode::Fusion))
                .collect()
        };
        for m in &modes {
            if let EvalMode::Single(id) = m {
                self.backend(id)?;
            }
        }
        Ok(modes)
    }

    pub fn fusion_config(&self, options: &RunOptions) -> FusionConfig {
        let mut config = self.fusion.clone();
        if let Some(segment) = options.segment {
            config.segment_mode = segment;
        }
        config
    }
}

/// Generates a continuation of `prompt` in the given mode.
pub fn generate(
    prompt: &str,
    mode: &EvalMode,
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<(String, Vec<TraceEvent>), HarnessError> {
    match mode {
        EvalMode::Single(id) => {
            let b = backends
                .iter()
                .find(|b| b.model_id() == id)
                .ok_or_else(|| HarnessError::Config(format!("no backend with id {id:?}")))?;
            Ok((greedy_continuation(b.as_ref(), prompt, config)?, Vec::new()))
        }
        EvalMode::Fusion(m) => {
            let config = FusionConfig {
                mode: *m,
                ..config.clone()
            };
            let r = fuse(prompt, backends, &config)?;
            Ok((r.chosen_text, r.trace))
        }
    }
}

fn run_item(
    task: &TaskSpec,
    pattern: &regex::Regex,
    index: usize,
    mode: &EvalMode,
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<(ItemRecord, Vec<TraceEvent>), HarnessError> {
    let example = &task.items()[index];
    let prompt = task.render_prompt(&example.input);
    let (generation, trace) = generate(&prompt, mode, backends, config)?;
    let answer = extract_answer(&generation, pattern);
    let correct = answer.as_deref() == Some(example.answer.trim());
    Ok((
        ItemRecord {
            task: task.name.clone(),
            mode: mode.to_string(),
            index,
            input: example.input.clone(),
            gold: example.answer.clone(),
            generation,
            answer,
            correct,
        },
        trace,
    ))
}

/// Runs every (task, mode) cell. Items of a cell may run on several threads;
/// results are always merged in item order.
pub fn evaluate(
    config: &RunConfig,
    backends: &[SharedBackend],
    options: &RunOptions,
) -> Result<Evaluation, HarnessError> {
    let modes = config.modes(options)?;
    let fusion = config.fusion_config(options);
    let jobs = options.jobs.or(config.eval.jobs).unwrap_or(1).max(1);
    let mut items = Vec::new();
    let mut traces = BTreeMap::new();
    for task in &config.tasks {
        let pattern = task.pattern()?;
        for mode in &modes {
            let n = task.items().len();
            let results: Vec<Result<(ItemRecord, Vec<TraceEvent>), HarnessError>> = if jobs == 1 {
                (0..n)
                    .map(|i| run_item(task, &pattern, i, mode, backends, &fusion))
                    .collect()
            } else {
                let mut slots: Vec<Option<_>> = (0..n).map(|_| None).collect();
                std::thread::scope(|scope| {
                    let handles: Vec<_> = (0..jobs)
                        .map(|j| {
                            let (pattern, fusion) = (&pattern, &fusion);
                            scope.spawn(move || {
                                (j..n)
                                    .step_by(jobs)
                                    .map(|i| (i, run_item(task, pattern, i, mode, backends, fusion)))
                                    .collect::<Vec<_>>()
                            })
                        })
                        .collect();
                    for h in handles {
                        for (i, r) in h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)) {
                            slots[i] = Some(r);
                        }
                    }
                });
                slots.into_iter().map(|s| s.expect("every item ran")).collect()
            };
            let mut lines = Vec::new();
            for result in results {
                let (record, trace) = result?;
                lines.extend(trace.into_iter().map(|event| TraceLine {
                    item: record.index,
                    event,
                }));
                items.push(record);
            }
            if !lines.is_empty() {
                traces.insert((task.name.clone(), mode.to_string()), lines);
            }
        }
    }
    Ok(Evaluation { items, traces })
}

fn write(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "+-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    rows.iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// Builds the backends, evaluates every task and writes `report.json`,
/// `items.jsonl` and one trace file per fused (task, mode) cell.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunReport, HarnessError> {
    Ok(run_with_dir(config, options)?.0)
}

/// Like [`run`], also returning the output directory when one was used.
pub fn run_with_dir(
    config: &RunConfig,
    options: &RunOptions,
) -> Result<(RunReport, Option<PathBuf>), HarnessError> {
    let backends = config.build_backends(options.seed)?;
    let evaluation = evaluate(config, &backends, options)?;
    let mut report = RunReport {
        tasks: RunReport::from_items(&evaluation.items),
        items_file: None,
        trace_files: Vec::new(),
    };
    let out_dir = options
        .output_dir
        .clone()
        .or_else(|| config.eval.output_dir.as_ref().map(|d| config.resolve(d)));
    if let Some(dir) = &out_dir {
        let items_file = PathBuf::from("items.jsonl");
        write(&dir.join(&items_file), &jsonl(&evaluation.items))?;
        report.items_file = Some(items_file);
        for ((task, mode), lines) in &evaluation.traces {
            let path = Path::new("traces").join(format!("{}.{}.jsonl", file_stem(task), file_stem(mode)));
            write(&dir.join(&path), &jsonl(lines))?;
            report.trace_files.push(path);
        }
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write(&dir.join("report.json"), &(json + "\n"))?;
    }
    Ok((report, out_dir))
}
