//! Masked-LM scoring and sentence-encoding contract.
//!
//! The language model and the sentence encoder live behind the [`Scorer`] and
//! [`Encoder`] traits. [`HttpScorer`] talks to an inference service over
//! JSON; [`MockScorer`] and [`MockEncoder`] are deterministic table-driven
//! stand-ins for tests and model-free runs.
//!
//! Label distributions are calibrated against the pattern rendered with empty
//! inputs: `p(y | x)` is proportional to `M(v(y) | P(x)) / M(v(y) | P(ε))`.

mod http;
mod mock;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};
use crate::task::{LabelDistribution, MaskedText, TaskConfig, MASK};

pub use http::{HttpScorer, ServiceInfo, SCORER_URL_ENV};
pub use mock::{hash_unit_vector, MockEncoder, MockFixture, MockScorer};

/// Scores below this are raised to it before any division.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePart {
    pub text: String,
    /// Token budget applied by the scorer's own tokenizer.
    pub truncate_to: Option<usize>,
}

impl ScorePart {
    pub fn new(text: impl Into<String>, truncate_to: Option<usize>) -> Self {
        ScorePart {
            text: text.into(),
            truncate_to,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub parts: Vec<ScorePart>,
    pub candidates: Vec<String>,
}

impl ScoreRequest {
    /// A single-part request for `masked`, scoring every verbalizer token.
    pub fn for_masked(task: &TaskConfig, masked: &MaskedText, budget: Option<usize>) -> Self {
        ScoreRequest {
            parts: vec![ScorePart::new(masked.as_str(), budget)],
            candidates: task.verbalizer_tokens().to_vec(),
        }
    }

    /// Parts joined by a single space, without truncation.
    pub fn joined(&self) -> String {
        join_parts(self.parts.iter().map(|p| p.text.as_str()))
    }

    /// Checks the request-side invariants. Truncation never removes the
    /// mask, so the mask count can be checked before truncation.
    pub fn validate(&self) -> Result<()> {
        let masks = self.joined().matches(MASK).count();
        if masks != 1 {
            return Err(SoupError::Protocol(format!(
                "context must contain exactly one {MASK}, found {masks}"
            )));
        }
        if self.candidates.is_empty() {
            return Err(SoupError::Protocol("no candidate tokens".into()));
        }
        for c in &self.candidates {
            if c.is_empty() || c.contains(char::is_whitespace) {
                return Err(SoupError::Protocol(format!(
                    "candidate {c:?} is not a single token"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn join_parts<'a>(parts: impl Iterator<Item = &'a str>) -> String {
    parts
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: BTreeMap<String, f64>,
}

impl ScoreResponse {
    /// The floored score for `candidate`.
    pub fn score(&self, candidate: &str) -> Result<f64> {
        let p = *self.scores.get(candidate).ok_or_else(|| {
            SoupError::Protocol(format!("response is missing candidate {candidate:?}"))
        })?;
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(SoupError::Protocol(format!(
                "score {p} for {candidate:?} outside [0, 1]"
            )));
        }
        Ok(p.max(SCORE_FLOOR))
    }
}

/// A masked language model: the probability of each candidate token at the
/// single masked position of a context.
pub trait Scorer: Send + Sync {
    /// Stable name of the model behind this scorer; part of the calibration
    /// cache key.
    fn identity(&self) -> String;

    fn score_mask(&self, request: &ScoreRequest) -> Result<ScoreResponse>;
}

/// A sentence encoder producing fixed-dimension vectors.
pub trait Encoder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

macro_rules! forward_impls {
    ($($ptr:ident),*) => {$(
        impl<S: Scorer + ?Sized> Scorer for $ptr<S> {
            fn identity(&self) -> String {
                (**self).identity()
            }
            fn score_mask(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
                (**self).score_mask(request)
            }
        }

        impl<E: Encoder + ?Sized> Encoder for $ptr<E> {
            fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
                (**self).embed(texts)
            }
        }
    )*};
}

forward_impls!(Box, Arc);

impl<S: Scorer + ?Sized> Scorer for &S {
    fn identity(&self) -> String {
        (**self).identity()
    }
    fn score_mask(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        (**self).score_mask(request)
    }
}

impl<E: Encoder + ?Sized> Encoder for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        (**self).embed(texts)
    }
}

/// Validate `request`, score it, and check that every candidate came back.
pub fn score_mask<S: Scorer + ?Sized>(scorer: &S, request: &ScoreRequest) -> Result<ScoreResponse> {
    request.validate()?;
    let response = scorer.score_mask(request)?;
    for c in &request.candidates {
        response.score(c)?;
    }
    Ok(response)
}

/// Embed a non-empty batch; all vectors must share one dimension.
pub fn embed<E: Encoder + ?Sized>(encoder: &E, texts: &[String]) -> Result<Vec<Vec<f32>>> {
    if texts.is_empty() {
        return Err(SoupError::Domain("nothing to embed".into()));
    }
    let vectors = encoder.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(SoupError::Protocol(format!(
            "encoder returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(SoupError::Protocol(
            "encoder returned vectors of inconsistent dimension".into(),
        ));
    }
    Ok(vectors)
}

/// `M(v(y) | P(ε))` for every label of one task, floored at [`SCORE_FLOOR`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub task: String,
    pub scores: Vec<f64>,
}

impl CalibrationTable {
    pub fn new(task: &TaskConfig, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != task.num_labels() {
            return Err(SoupError::Domain(format!(
                "calibration has {} entries for {} labels",
                scores.len(),
                task.num_labels()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(SoupError::Domain(
                "calibration scores must be non-negative".into(),
            ));
        }
        Ok(CalibrationTable {
            task: task.name().to_string(),
            scores: scores.into_iter().map(|s| s.max(SCORE_FLOOR)).collect(),
        })
    }

    /// All-ones table: leaves raw scores uncorrected.
    pub fn identity(task: &TaskConfig) -> Self {
        CalibrationTable {
            task: task.name().to_string(),
            scores: vec![1.0; task.num_labels()],
        }
    }
}

/// Score the empty-input pattern once, uncached.
pub fn calibrate<S: Scorer + ?Sized>(scorer: &S, task: &TaskConfig) -> Result<CalibrationTable> {
    let request = ScoreRequest::for_masked(task, &task.render_calibration_input(), None);
    let response = score_mask(scorer, &request)?;
    let scores = task
        .verbalizer_tokens()
        .iter()
        .map(|t| response.score(t))
        .collect::<Result<Vec<_>>>()?;
    CalibrationTable::new(task, scores)
}

/// Write-once cache of calibration tables keyed by (task name, scorer
/// identity).
#[derive(Debug, Default)]
pub struct Calibrator {
    tables: Mutex<HashMap<(String, String), Arc<CalibrationTable>>>,
}

impl Calibrator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get<S: Scorer + ?Sized>(
        &self,
        scorer: &S,
        task: &TaskConfig,
    ) -> Result<Arc<CalibrationTable>> {
        let key = (task.name().to_string(), scorer.identity());
        // Held across the scorer call so concurrent callers issue one request.
        let mut tables = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(table) = tables.get(&key) {
            return Ok(Arc::clone(table));
        }
        let table = Arc::new(calibrate(scorer, task)?);
        tables.insert(key, Arc::clone(&table));
        Ok(table)
    }
}

/// Normalize calibrated ratios `raw[y] / calib[y]` into a distribution.
pub fn normalize_ratios(raw: &[f64], calib: &[f64]) -> Result<LabelDistribution> {
    if raw.len() != calib.len() {
        return Err(SoupError::Domain(format!(
            "{} raw scores for {} calibration entries",
            raw.len(),
            calib.len()
        )));
    }
    let ratios = raw
        .iter()
        .zip(calib)
        .map(|(r, c)| r.max(SCORE_FLOOR) / c.max(SCORE_FLOOR))
        .collect();
    LabelDistribution::from_weights(ratios)
}

/// Calibrated label distribution from a scorer response.
pub fn distribution_from_response(
    task: &TaskConfig,
    response: &ScoreResponse,
    calib: &CalibrationTable,
) -> Result<LabelDistribution> {
    let raw = task
        .verbalizer_tokens()
        .iter()
        .map(|t| response.score(t))
        .collect::<Result<Vec<_>>>()?;
    normalize_ratios(&raw, &calib.scores)
}

/// Score `request` and turn the verbalizer probabilities into a calibrated
/// label distribution.
pub fn zero_shot_distribution<S: Scorer + ?Sized>(
    scorer: &S,
    task: &TaskConfig,
    request: &ScoreRequest,
    calib: &CalibrationTable,
) -> Result<LabelDistribution> {
    let response = score_mask(scorer, request)?;
    distribution_from_response(task, &response, calib)
}

/// Whitespace tokenization with per-part budgets, as used by the mock
/// scorer. A part holding the mask loses tokens from the end farther away
/// from the mask, and the mask itself is always kept.
pub fn truncate_whitespace(text: &str, budget: Option<usize>) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let Some(budget) = budget else {
        return tokens.join(" ");
    };
    let n = tokens.len();
    if n <= budget {
        return tokens.join(" ");
    }
    let window = match tokens.iter().position(|t| t.contains(MASK)) {
        None => 0..budget,
        Some(m) => {
            let budget = budget.max(1);
            let start = if n - 1 - m <= m {
                (n - budget).min(m)
            } else {
                (m + 1).saturating_sub(budget)
            };
            start..start + budget
        }
    };
    tokens[window].join(" ")
}

/// Apply whitespace truncation to every part and join with single spaces.
pub fn assemble_whitespace_context(request: &ScoreRequest) -> Result<String> {
    let truncated: Vec<String> = request
        .parts
        .iter()
        .map(|p| truncate_whitespace(&p.text, p.truncate_to))
        .collect();
    let context = join_parts(truncated.iter().map(String::as_str));
    let masks = context.matches(MASK).count();
    if masks != 1 {
        return Err(SoupError::Protocol(format!(
            "context must contain exactly one {MASK} after truncation, found {masks}"
        )));
    }
    Ok(context)
}
