//! Segment perplexity, cross-model averaging and winner selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("cannot compute the perplexity of an empty segment")]
    EmptySegment,
    #[error("segment disqualified: model {0} could not score it")]
    DisqualifiedSegment(String),
    #[error("no qualified candidate segment")]
    NoQualifiedCandidate,
}

/// `exp` of the mean per-token negative log-likelihood (natural log).
pub fn perplexity(nll_per_token: &[f64]) -> Result<f64, ScoringError> {
    if nll_per_token.is_empty() {
        return Err(ScoringError::EmptySegment);
    }
    Ok(perplexity_from_sum(
        nll_per_token.iter().sum(),
        nll_per_token.len(),
    ))
}

pub fn perplexity_from_sum(nll_sum: f64, token_count: usize) -> f64 {
    (nll_sum / token_count as f64).exp()
}

/// Arithmetic mean of per-model perplexities. `None` marks a model that
/// could not score the segment, which disqualifies it.
pub fn average_perplexity<'a>(
    scores: impl IntoIterator<Item = (&'a str, Option<f64>)>,
) -> Result<f64, ScoringError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (model, ppl) in scores {
        let ppl = ppl.ok_or_else(|| ScoringError::DisqualifiedSegment(model.to_string()))?;
        sum += ppl;
        n += 1;
    }
    if n == 0 {
        return Err(ScoringError::EmptySegment);
    }
    Ok(sum / n as f64)
}

/// One model's verdict on a candidate segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub nll_sum: f64,
    pub token_count: usize,
}

impl ModelScore {
    pub fn perplexity(&self) -> Result<f64, ScoringError> {
        if self.token_count == 0 {
            return Err(ScoringError::EmptySegment);
        }
        Ok(perplexity_from_sum(self.nll_sum, self.token_count))
    }
}

/// Scores of one candidate under every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub per_model_nll_sum: BTreeMap<String, f64>,
    pub per_model_token_count: BTreeMap<String, usize>,
    pub per_model_ppl: BTreeMap<String, f64>,
    /// `None` when some model could not score the candidate.
    pub avg_ppl: Option<f64>,
    pub disqualified_by: Vec<String>,
}

impl SegmentScore {
    /// Builds a score from per-model results in model order. A model whose
    /// result is `None` disqualifies the candidate.
    pub fn from_models<'a>(
        results: impl IntoIterator<Item = (&'a str, Option<ModelScore>)>,
    ) -> Self {
        let mut score = SegmentScore {
            per_model_nll_sum: BTreeMap::new(),
            per_model_token_count: BTreeMap::new(),
            per_model_ppl: BTreeMap::new(),
            avg_ppl: None,
            disqualified_by: Vec::new(),
        };
        let mut ppls: Vec<(&str, Option<f64>)> = Vec::new();
        for (model, result) in results {
            let ppl = result.and_then(|r| r.perplexity().ok());
            match (result, ppl) {
                (Some(r), Some(p)) => {
                    score.per_model_nll_sum.insert(model.to_string(), r.nll_sum);
                    score.per_model_token_count.insert(model.to_string(), r.token_count);
                    score.per_model_ppl.insert(model.to_string(), p);
                }
                _ => score.disqualified_by.push(model.to_string()),
            }
            ppls.push((model, ppl));
        }
        score.avg_ppl = average_perplexity(ppls).ok();
        score
    }

    pub fn is_qualified(&self) -> bool {
        self.avg_ppl.is_some()
    }
}

/// Index of the candidate with the smallest average perplexity; ties go to
/// the lowest index. Disqualified candidates are skipped.
pub fn select_winner(avg_ppls: &[Option<f64>]) -> Result<usize, ScoringError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, ppl) in avg_ppls.iter().enumerate() {
        let Some(p) = *ppl else { continue };
        if best.is_none_or(|(_, b)| p < b) {
            best = Some((i, p));
        }
    }
    best.map(|(i, _)| i).ok_or(ScoringError::NoQualifiedCandidate)
}
