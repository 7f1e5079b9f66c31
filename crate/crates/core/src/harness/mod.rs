//! Configuration files, few-shot task evaluation and run reports.

mod config;
mod eval;
mod task;

pub use config::{BackendSpec, BackendType, EvalSection, RunConfig};
pub use eval::{
    evaluate, generate, jsonl, run, run_with_dir, EvalMode, Evaluation, ItemRecord, ModeRow, RunOptions,
    RunReport, TaskReport, TraceLine,
};
pub use task::{extract_answer, Example, TaskSpec};

use crate::backend::BackendError;
use crate::engine::EngineError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(transparent)]
    Engine(EngineError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn from_backend(id: &str, err: BackendError) -> Self {
        match err {
            BackendError::Incompatible(why) => HarnessError::Config(format!("backend {id}: {why}")),
            other => HarnessError::Backend(format!("backend {id}: {other}")),
        }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Backend(_) => 3,
            HarnessError::Engine(e) if e.is_backend_failure() => 3,
            HarnessError::Engine(_) | HarnessError::Io(_) => 1,
        }
    }
}

impl From<EngineError> for HarnessError {
    fn from(e: EngineError) -> Self {
        if e.is_backend_failure() {
            HarnessError::Backend(e.to_string())
        } else {
            HarnessError::Engine(e)
        }
    }
}
