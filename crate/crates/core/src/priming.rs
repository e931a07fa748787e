//! Priming a masked LM with self-labeled neighbors.
//!
//! Two strategies are supported. Concatenation puts every filled neighbor
//! pattern in front of the test pattern and scores once. Bag-of-contexts
//! scores one `[neighbor; test]` context per neighbor and takes the weighted
//! mean of the calibrated distributions:
//!
//! ```text
//! q_f(y) = Σ_i w_i · q_i(y) / Σ_i w_i
//! ```

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};
use crate::scorer::{zero_shot_distribution, CalibrationTable, ScorePart, ScoreRequest, Scorer};
use crate::task::{Example, LabelDistribution, LabelId, TaskConfig};

/// A retrieved pool example with its similarity to the query and its
/// self-predicted label.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub example: Example,
    pub similarity: f64,
    pub predicted_label: LabelId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingKind {
    #[default]
    Uniform,
    Similarity,
}

impl fmt::Display for WeightingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightingKind::Uniform => "uniform",
            WeightingKind::Similarity => "similarity",
        })
    }
}

impl FromStr for WeightingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "unif" => Ok(WeightingKind::Uniform),
            "similarity" | "sim" => Ok(WeightingKind::Similarity),
            other => Err(format!("unknown weighting {other:?} (uniform|similarity)")),
        }
    }
}

/// Weight of one neighbor. Negative similarities clamp to zero.
pub fn weight(kind: WeightingKind, neighbor: &Neighbor) -> f64 {
    match kind {
        WeightingKind::Uniform => 1.0,
        WeightingKind::Similarity => neighbor.similarity.max(0.0),
    }
}

/// Weighted mean of label distributions, accumulated in list order.
///
/// Weights must be finite and non-negative; if they are all zero every
/// distribution counts equally.
pub fn aggregate(
    distributions: &[LabelDistribution],
    weights: &[f64],
) -> Result<LabelDistribution> {
    if distributions.is_empty() {
        return Err(SoupError::Domain("nothing to aggregate".into()));
    }
    if distributions.len() != weights.len() {
        return Err(SoupError::Domain(format!(
            "{} distributions but {} weights",
            distributions.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SoupError::Domain(
            "weights must be finite and non-negative".into(),
        ));
    }
    let labels = distributions[0].len();
    if distributions.iter().any(|d| d.len() != labels) {
        return Err(SoupError::Domain(
            "distributions cover different label sets".into(),
        ));
    }

    let total: f64 = weights.iter().sum();
    // Normalizing weights first keeps a lone non-zero weight exactly 1.
    let normalized: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / weights.len() as f64; weights.len()]
    };

    let mut acc = vec![0.0; labels];
    for (dist, w) in distributions.iter().zip(&normalized) {
        for (a, p) in acc.iter_mut().zip(dist.probs()) {
            *a += w * p;
        }
    }
    Ok(LabelDistribution::from_convex(acc))
}

/// A label distribution together with its argmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub distribution: LabelDistribution,
    pub label: LabelId,
}

impl From<LabelDistribution> for Prediction {
    fn from(distribution: LabelDistribution) -> Self {
        let label = distribution.argmax();
        Prediction {
            distribution,
            label,
        }
    }
}

/// `[P̂(neighbor); P(x)]`, each part under `budget` tokens.
pub fn build_boc_context(
    task: &TaskConfig,
    neighbor: &Neighbor,
    x: &Example,
    budget: Option<usize>,
) -> Result<ScoreRequest> {
    build_concat_context(task, std::slice::from_ref(neighbor), x, budget)
}

/// `[P̂(x_1), …, P̂(x_k), P(x)]` with neighbors nearest first (ties by id).
pub fn build_concat_context(
    task: &TaskConfig,
    neighbors: &[Neighbor],
    x: &Example,
    budget: Option<usize>,
) -> Result<ScoreRequest> {
    if neighbors.is_empty() {
        return Err(SoupError::Domain(
            "priming needs at least one neighbor".into(),
        ));
    }
    let mut ordered: Vec<&Neighbor> = neighbors.iter().collect();
    ordered.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.example.id.cmp(&b.example.id))
    });
    let mut parts = Vec::with_capacity(ordered.len() + 1);
    for n in ordered {
        parts.push(ScorePart::new(
            task.render_filled_pattern(&n.example, n.predicted_label)?,
            budget,
        ));
    }
    parts.push(ScorePart::new(
        task.render_pattern(x)?.into_string(),
        budget,
    ));
    Ok(ScoreRequest {
        parts,
        candidates: task.verbalizer_tokens().to_vec(),
    })
}

/// Bag-of-contexts prediction for `x`. Neighbor contexts are scored in
/// parallel; aggregation runs in neighbor order.
pub fn classify_boc<S: Scorer + ?Sized>(
    scorer: &S,
    task: &TaskConfig,
    neighbors: &[Neighbor],
    x: &Example,
    kind: WeightingKind,
    calib: &CalibrationTable,
    budget: Option<usize>,
) -> Result<Prediction> {
    if neighbors.is_empty() {
        return Err(SoupError::Domain(
            "priming needs at least one neighbor".into(),
        ));
    }
    let per_context = neighbors
        .par_iter()
        .map(|n| {
            let request = build_boc_context(task, n, x, budget)?;
            zero_shot_distribution(scorer, task, &request, calib)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = neighbors.iter().map(|n| weight(kind, n)).collect();
    Ok(aggregate(&per_context, &weights)?.into())
}

/// Concatenation priming: one scorer call over all neighbors.
pub fn classify_concat<S: Scorer + ?Sized>(
    scorer: &S,
    task: &TaskConfig,
    neighbors: &[Neighbor],
    x: &Example,
    calib: &CalibrationTable,
    budget: Option<usize>,
) -> Result<Prediction> {
    let request = build_concat_context(task, neighbors, x, budget)?;
    Ok(zero_shot_distribution(scorer, task, &request, calib)?.into())
}
