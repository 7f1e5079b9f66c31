use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::task::TaskSpec;
use super::HarnessError;
use crate::backend::{NgramBackend, RemoteBackend, Script, ScriptedBackend, SharedBackend};
use crate::engine::FusionConfig;
use crate::tokenizer::{load_tokenizer, SharedTokenizer};
use crate::toy;

/// Everything one run needs: backends, fusion settings and tasks.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub eval: EvalSection,
    pub backends: Vec<BackendSpec>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Modes to evaluate; empty means every single model plus all fusion modes.
    #[serde(default)]
    pub modes: Vec<String>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendType {
    Ngram,
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub id: String,
    pub kind: BackendType,
    /// `builtin:word`, `builtin:bpe`, `builtin:bytes`, `builtin:prefix`, or a
    /// path to a JSON vocabulary file.
    pub tokenizer: String,
    /// Training text for n-gram backends, one sentence per line.
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub corpus_lines: Vec<String>,
    /// Keep only this many corpus lines, after shuffling when a seed is set.
    pub max_lines: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub scripts: Vec<Script>,
    #[serde(default)]
    pub piece_nlls: BTreeMap<String, f64>,
    #[serde(default = "default_nll")]
    pub default_nll: f64,
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_nll() -> f64 {
    5.0
}

fn default_timeout() -> f64 {
    30.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, HarnessError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))?;
        config.base_dir = base_dir;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.backends.is_empty() {
            return Err(HarnessError::Config("at least one [[backends]] entry is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for b in &self.backends {
            if !seen.insert(b.id.as_str()) {
                return Err(HarnessError::Config(format!("duplicate backend id {:?}", b.id)));
            }
            b.validate()?;
        }
        self.fusion
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn backend(&self, id: &str) -> Result<&BackendSpec, HarnessError> {
        self.backends
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| HarnessError::Config(format!("no backend with id {id:?}")))
    }

    pub fn tokenizer(&self, spec: &str) -> Result<SharedTokenizer, HarnessError> {
        match spec.strip_prefix("builtin:") {
            Some("word") => Ok(toy::word_tokenizer()),
            Some("bpe") => Ok(toy::bpe_tokenizer()),
            Some("bytes") => Ok(toy::byte_tokenizer()),
            Some("prefix") => Ok(toy::prefix_space_tokenizer()),
            Some(other) => Err(HarnessError::Config(format!("unknown builtin tokenizer {other:?}"))),
            None => load_tokenizer(&self.resolve(Path::new(spec)))
                .map_err(|e| HarnessError::Config(e.to_string())),
        }
    }

    fn corpus(&self, spec: &BackendSpec, seed: Option<u64>) -> Result<Vec<String>, HarnessError> {
        let mut lines = spec.corpus_lines.clone();
        if let Some(path) = &spec.corpus {
            let path = self.resolve(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            lines.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
        }
        if let Some(seed) = seed {
            lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        if let Some(max) = spec.max_lines {
            lines.truncate(max);
        }
        Ok(lines)
    }

    /// Builds one backend. Remote backends are contacted to check that the
    /// served tokenizer matches the configured one.
    pub fn build_backend(&self, spec: &BackendSpec, seed: Option<u64>) -> Result<SharedBackend, HarnessError> {
        let tok = self.tokenizer(&spec.tokenizer)?;
        let window = self.fusion.codec_window;
        Ok(match spec.kind {
            BackendType::Ngram => {
                let lines = self.corpus(spec, seed)?;
                Arc::new(
                    NgramBackend::train(&spec.id, tok, lines.iter().map(String::as_str), spec.alpha, window)
                        .map_err(|e| HarnessError::Config(format!("backend {}: {e}", spec.id)))?,
                )
            }
            BackendType::Scripted => Arc::new(ScriptedBackend::scripted(
                &spec.id,
                tok,
                spec.scripts.clone(),
                &spec.piece_nlls,
                spec.default_nll,
                window,
            )),
            BackendType::Remote => {
                let endpoint = spec.endpoint.as_deref().expect("validated");
                let timeout = Duration::from_secs_f64(spec.timeout_secs);
                Arc::new(
                    RemoteBackend::connect(endpoint, tok, timeout)
                        .map_err(|e| HarnessError::from_backend(&spec.id, e))?
                        .with_model_id(&spec.id),
                )
            }
        })
    }

    pub fn build_backends(&self, seed: Option<u64>) -> Result<Vec<SharedBackend>, HarnessError> {
        self.backends
            .iter()
            .map(|b| self.build_backend(b, seed))
            .collect()
    }
}

impl BackendSpec {
    fn missing(&self, field: &str) -> HarnessError {
        HarnessError::Config(format!("backend {}: missing field `{field}`", self.id))
    }

    fn validate(&self) -> Result<(), HarnessError> {
        match self.kind {
            BackendType::Ngram if self.corpus.is_none() && self.corpus_lines.is_empty() => {
                Err(self.missing("corpus"))
            }
            BackendType::Scripted if self.scripts.is_empty() => Err(self.missing("scripts")),
            BackendType::Remote if self.endpoint.is_none() => Err(self.missing("endpoint")),
            _ if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) => Err(
                HarnessError::Config(format!("backend {}: timeout_secs must be positive", self.id)),
            ),
            _ => Ok(()),
        }
    }
}
