//! Joint generation: per-model segments, cross-model perplexity selection
//! and broadcast of the winner, plus whole-continuation reranking.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::backend::{Backend, BackendError, SessionId, SharedBackend};
use crate::scoring::{select_winner, ModelScore, ScoringError, SegmentScore};
use crate::segmenter::{
    BackendStream, ModelView, Segment, SegmentError, SegmentMode, Segmenter,
    DEFAULT_SEGMENT_TOKEN_CAP,
};
use crate::tokenizer::{CodecWindow, ContextWindow, TokenizerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FusionMode {
    #[default]
    #[serde(rename = "cool")]
    Cool,
    #[serde(rename = "rerank")]
    Rerank,
    #[serde(rename = "cool+r")]
    CoolPlusR,
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cool" => Ok(FusionMode::Cool),
            "rerank" => Ok(FusionMode::Rerank),
            "cool+r" => Ok(FusionMode::CoolPlusR),
            other => Err(format!("unknown fusion mode {other:?}")),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Cool => "cool",
            FusionMode::Rerank => "rerank",
            FusionMode::CoolPlusR => "cool+r",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(rename = "segment")]
    pub segment_mode: SegmentMode,
    pub mode: FusionMode,
    pub max_iterations: usize,
    pub max_new_chars: usize,
    pub stop_strings: Vec<String>,
    pub segment_token_cap: usize,
    #[serde(rename = "codec_window_k")]
    pub codec_window: CodecWindow,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            segment_mode: SegmentMode::Shortest,
            mode: FusionMode::Cool,
            max_iterations: 64,
            max_new_chars: 256,
            stop_strings: Vec::new(),
            segment_token_cap: DEFAULT_SEGMENT_TOKEN_CAP,
            codec_window: CodecWindow::default(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let positive = [
            ("max_iterations", self.max_iterations),
            ("max_new_chars", self.max_new_chars),
            ("segment_token_cap", self.segment_token_cap),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.stop_strings.iter().any(String::is_empty) {
            return Err(EngineError::InvalidConfig("stop strings must be non-empty".into()));
        }
        Ok(())
    }

    /// Upper bound on tokens in one individual continuation.
    fn token_budget(&self) -> usize {
        self.max_iterations.saturating_mul(self.segment_token_cap)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("at least one backend is required")]
    NoBackends,
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: {source}")]
    Scoring {
        iteration: usize,
        source: ScoringError,
    },
    #[error("backend {model}: {source}")]
    Backend {
        model: String,
        source: BackendError,
    },
    #[error("backend {model}: {source}")]
    Segment {
        model: String,
        source: SegmentError,
    },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl EngineError {
    fn backend(model: &str, source: BackendError) -> Self {
        EngineError::Backend {
            model: model.to_string(),
            source,
        }
    }

    /// True when the failure came from a backend being unreachable.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            EngineError::Backend {
                source: BackendError::Unavailable(_),
                ..
            } | EngineError::Segment {
                source: SegmentError::Backend(BackendError::Unavailable(_)),
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    StopString,
    MaxNewChars,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Segment,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub model_id: String,
    pub segment_text: String,
    pub per_model_ppl: BTreeMap<String, f64>,
    /// `null` when some model could not score the candidate.
    pub avg_ppl: Option<f64>,
}

/// One selection step: a fusion iteration or the final rerank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: Stage,
    pub iteration: usize,
    pub candidates: Vec<CandidateRecord>,
    pub winner_model: String,
    pub winner_text: String,
}

/// Identifier used for the joint continuation among rerank candidates.
pub const JOINT: &str = "JOINT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChosenSource {
    Joint,
    Model(String),
}

impl ChosenSource {
    pub fn as_str(&self) -> &str {
        match self {
            ChosenSource::Joint => JOINT,
            ChosenSource::Model(m) => m,
        }
    }
}

impl Serialize for ChosenSource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionResult {
    /// Jointly generated text; empty in rerank mode, which has none.
    pub joint_text: String,
    /// Per-model greedy continuations, filled in the rerank modes.
    pub individual_texts: BTreeMap<String, String>,
    pub chosen_text: String,
    pub chosen_source: ChosenSource,
    pub stop_reason: Option<StopReason>,
    pub trace: Vec<TraceEvent>,
}

impl FusionResult {
    /// The trace as JSON lines, one event per line.
    pub fn trace_jsonl(&self) -> String {
        trace_jsonl(&self.trace)
    }
}

pub fn trace_jsonl(trace: &[TraceEvent]) -> String {
    let mut out = String::new();
    for event in trace {
        out.push_str(&serde_json::to_string(event).expect("trace events serialize"));
        out.push('\n');
    }
    out
}

/// Runs `f` on every item, in parallel when there is more than one, and
/// returns results in input order.
fn fan_out<'a, T: Sync, R: Send>(items: &'a [T], f: impl Fn(&'a T) -> R + Sync) -> Vec<R> {
    if items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.iter().map(|item| scope.spawn(|| f(item))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

/// Applies stop strings and the character limit to generated text. Returns
/// the reason when generation must stop.
fn apply_text_limits(text: &mut String, config: &FusionConfig) -> Option<StopReason> {
    let first_stop = config
        .stop_strings
        .iter()
        .filter_map(|s| text.find(s.as_str()))
        .min();
    if let Some(at) = first_stop {
        text.truncate(at);
        return Some(StopReason::StopString);
    }
    if let Some((at, _)) = text.char_indices().nth(config.max_new_chars) {
        text.truncate(at);
        return Some(StopReason::MaxNewChars);
    }
    (text.chars().count() == config.max_new_chars).then_some(StopReason::MaxNewChars)
}

struct Member<'a> {
    backend: &'a dyn Backend,
    session: SessionId,
    window: ContextWindow,
    finished: bool,
}

impl Member<'_> {
    fn id(&self) -> &str {
        self.backend.model_id()
    }
}

fn open_members<'a>(
    backends: &'a [SharedBackend],
    prompt: &str,
    config: &FusionConfig,
) -> Result<Vec<Member<'a>>, EngineError> {
    fan_out(backends, |b| {
        let tok = b.tokenizer();
        let window = ContextWindow::from_text(tok.as_ref(), prompt, config.codec_window)?;
        let session = b
            .open_session(prompt)
            .map_err(|e| EngineError::backend(b.model_id(), e))?;
        Ok(Member {
            backend: b.as_ref(),
            session,
            window,
            finished: false,
        })
    })
    .into_iter()
    .collect()
}

fn close_members(members: &[Member<'_>]) {
    for m in members {
        let _ = m.backend.close(&m.session);
    }
}

/// Generates one segment from a fork of the member's session.
fn candidate_segment(
    m: &Member<'_>,
    views: &[ModelView<'_>],
    config: &FusionConfig,
) -> Result<Segment, EngineError> {
    let fork = m
        .backend
        .fork(&m.session)
        .map_err(|e| EngineError::backend(m.id(), e))?;
    let view = ModelView {
        tokenizer: m.backend.tokenizer().as_ref(),
        window: &m.window,
    };
    let mut segmenter = Segmenter::new(BackendStream {
        backend: m.backend,
        session: &fork,
    });
    let segment = match config.segment_mode {
        SegmentMode::Shortest => segmenter.shortest(view, m.id(), config.segment_token_cap),
        SegmentMode::Aligned => segmenter.aligned(view, views, m.id(), config.segment_token_cap),
    };
    let _ = m.backend.close(&fork);
    segment.map_err(|source| EngineError::Segment {
        model: m.id().to_string(),
        source,
    })
}

/// Scores every text under one backend. A text the backend cannot encode
/// yields `None`.
fn score_all(
    backend: &dyn Backend,
    session: &SessionId,
    texts: &[&str],
) -> Result<Vec<Option<ModelScore>>, EngineError> {
    texts
        .iter()
        .map(|text| {
            if text.is_empty() {
                return Ok(None);
            }
            match backend.score_text(session, text) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.is_encoding_failure() => Ok(None),
                Err(e) => Err(EngineError::backend(backend.model_id(), e)),
            }
        })
        .collect()
}

/// Scores `texts` with every member and picks the winner.
fn judge(
    members: &[Member<'_>],
    labels: &[String],
    texts: &[&str],
    stage: Stage,
    iteration: usize,
) -> Result<(usize, TraceEvent, Vec<SegmentScore>), EngineError> {
    let per_model = fan_out(members, |m| score_all(m.backend, &m.session, texts));
    let per_model: Vec<Vec<Option<ModelScore>>> = per_model.into_iter().collect::<Result<_, _>>()?;
    let scores: Vec<SegmentScore> = (0..texts.len())
        .map(|c| {
            SegmentScore::from_models(
                members
                    .iter()
                    .zip(&per_model)
                    .map(|(m, s)| (m.id(), s[c])),
            )
        })
        .collect();
    let avgs: Vec<Option<f64>> = scores.iter().map(|s| s.avg_ppl).collect();
    let winner = select_winner(&avgs).map_err(|source| EngineError::Scoring { iteration, source })?;
    let event = TraceEvent {
        stage,
        iteration,
        candidates: labels
            .iter()
            .zip(texts)
            .zip(&scores)
            .map(|((label, text), score)| CandidateRecord {
                model_id: label.clone(),
                segment_text: text.to_string(),
                per_model_ppl: score.per_model_ppl.clone(),
                avg_ppl: score.avg_ppl,
            })
            .collect(),
        winner_model: labels[winner].clone(),
        winner_text: texts[winner].to_string(),
    };
    Ok((winner, event, scores))
}

fn joint_generation(
    members: &mut [Member<'_>],
    config: &FusionConfig,
) -> Result<(String, Option<StopReason>, Vec<TraceEvent>), EngineError> {
    let mut joint = String::new();
    let mut trace = Vec::new();
    for iteration in 0..config.max_iterations {
        let views: Vec<ModelView<'_>> = members
            .iter()
            .map(|m| ModelView {
                tokenizer: m.backend.tokenizer().as_ref(),
                window: &m.window,
            })
            .collect();
        let active: Vec<&Member<'_>> = members.iter().filter(|m| !m.finished).collect();
        let segments = fan_out(&active, |m| candidate_segment(m, &views, config));
        let mut candidates: Vec<Segment> = Vec::new();
        let mut done: Vec<String> = Vec::new();
        for segment in segments {
            let segment = segment?;
            if segment.text.is_empty() {
                done.push(segment.origin_model);
            } else {
                candidates.push(segment);
            }
        }
        drop(views);
        for m in members.iter_mut() {
            if done.iter().any(|d| d == m.id()) {
                m.finished = true;
            }
        }
        if candidates.is_empty() {
            return Ok((joint, Some(StopReason::Eos), trace));
        }
        let labels: Vec<String> = candidates.iter().map(|c| c.origin_model.clone()).collect();
        let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
        let (w, event, _) = judge(members, &labels, &texts, Stage::Segment, iteration)?;
        let winner = &candidates[w];
        let appended = fan_out(members, |m| {
            m.backend
                .append_text(&m.session, &winner.text)
                .map_err(|e| EngineError::backend(m.id(), e))
        });
        appended.into_iter().collect::<Result<Vec<()>, _>>()?;
        for m in members.iter_mut() {
            m.window.push_text(m.backend.tokenizer().as_ref(), &winner.text)?;
        }
        joint.push_str(&winner.text);
        trace.push(event);
        let limit = apply_text_limits(&mut joint, config);
        if winner.ends_stream {
            return Ok((joint, Some(StopReason::Eos), trace));
        }
        if limit.is_some() {
            return Ok((joint, limit, trace));
        }
    }
    Ok((joint, Some(StopReason::MaxIterations), trace))
}

/// Plain greedy decoding of one backend under the same stop conditions.
pub fn greedy_continuation(
    backend: &dyn Backend,
    prompt: &str,
    config: &FusionConfig,
) -> Result<String, EngineError> {
    let id = backend.model_id();
    let tok = backend.tokenizer().as_ref();
    let session = backend
        .open_session(prompt)
        .map_err(|e| EngineError::backend(id, e))?;
    let mut window = ContextWindow::from_text(tok, prompt, config.codec_window)?;
    let mut text = String::new();
    let mut pending = Vec::new();
    let mut result = Ok(());
    for _ in 0..config.token_budget() {
        let t = match backend.next_token(&session) {
            Ok(t) => t,
            Err(e) => {
                result = Err(EngineError::backend(id, e));
                break;
            }
        };
        if t.eos {
            break;
        }
        pending.push(t.id);
        if let Some(piece) = window.decode(tok, &pending) {
            text.push_str(&piece);
            window.push_tokens(tok, &pending);
            pending.clear();
            if apply_text_limits(&mut text, config).is_some() {
                break;
            }
        }
    }
    let _ = backend.close(&session);
    result?;
    if !pending.is_empty() {
        text.push_str(&window.decode_lossy(tok, &pending));
        apply_text_limits(&mut text, config);
    }
    Ok(text)
}

/// Scores whole continuations of `prompt` with every backend and returns
/// the index of the one with the lowest average perplexity.
pub fn rerank_continuations(
    prompt: &str,
    continuations: &[(String, String)],
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<(usize, TraceEvent, Vec<SegmentScore>), EngineError> {
    if backends.is_empty() {
        return Err(EngineError::NoBackends);
    }
    let members = open_members(backends, prompt, config)?;
    let labels: Vec<String> = continuations.iter().map(|(l, _)| l.clone()).collect();
    let texts: Vec<&str> = continuations.iter().map(|(_, t)| t.as_str()).collect();
    let result = judge(&members, &labels, &texts, Stage::Rerank, 0);
    close_members(&members);
    result
}

/// Reranks a pool of continuations. When every continuation is empty there
/// is nothing to score and the first one is returned without an event.
fn pick(
    prompt: &str,
    pool: &[(String, String)],
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<(usize, Option<TraceEvent>), EngineError> {
    if pool.iter().all(|(_, text)| text.is_empty()) {
        return Ok((0, None));
    }
    let (w, event, _) = rerank_continuations(prompt, pool, backends, config)?;
    Ok((w, Some(event)))
}

fn individual_continuations(
    prompt: &str,
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<Vec<(String, String)>, EngineError> {
    fan_out(backends, |b| {
        greedy_continuation(b.as_ref(), prompt, config).map(|t| (b.model_id().to_string(), t))
    })
    .into_iter()
    .collect()
}

/// Fuses the backends on one prompt according to `config.mode`.
pub fn fuse(
    prompt: &str,
    backends: &[SharedBackend],
    config: &FusionConfig,
) -> Result<FusionResult, EngineError> {
    if backends.is_empty() {
        return Err(EngineError::NoBackends);
    }
    config.validate()?;
    if config.mode == FusionMode::Rerank {
        let individual = individual_continuations(prompt, backends, config)?;
        let (w, event) = pick(prompt, &individual, backends, config)?;
        return Ok(FusionResult {
            joint_text: String::new(),
            chosen_text: individual[w].1.clone(),
            chosen_source: ChosenSource::Model(individual[w].0.clone()),
            individual_texts: individual.into_iter().collect(),
            stop_reason: None,
            trace: event.into_iter().collect(),
        });
    }
    let mut members = open_members(backends, prompt, config)?;
    let outcome = joint_generation(&mut members, config);
    close_members(&members);
    let (joint_text, stop_reason, mut trace) = outcome?;
    if config.mode == FusionMode::Cool {
        return Ok(FusionResult {
            chosen_text: joint_text.clone(),
            joint_text,
            individual_texts: BTreeMap::new(),
            chosen_source: ChosenSource::Joint,
            stop_reason,
            trace,
        });
    }
    let individual = individual_continuations(prompt, backends, config)?;
    let mut pool = vec![(JOINT.to_string(), joint_text.clone())];
    pool.extend(individual.iter().cloned());
    let (w, event) = pick(prompt, &pool, backends, config)?;
    if let Some(mut event) = event {
        event.iteration = trace.len();
        trace.push(event);
    }
    Ok(FusionResult {
        chosen_text: pool[w].1.clone(),
        chosen_source: if w == 0 {
            ChosenSource::Joint
        } else {
            ChosenSource::Model(pool[w].0.clone())
        },
        joint_text,
        individual_texts: individual.into_iter().collect(),
        stop_reason,
        trace,
    })
}
