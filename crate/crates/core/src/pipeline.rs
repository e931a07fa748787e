//! End-to-end classification with an unlabeled pool.
//!
//! [`Soup::precompute_pool`] embeds the pool, indexes it and labels every
//! pool example zero-shot. [`Soup::classify`] retrieves the nearest pool
//! examples for an input, primes the model with them and their self-predicted
//! labels, and returns the aggregated distribution. [`Soup::iterative_soup`]
//! reclassifies the pool against itself, replacing all self-predictions at
//! once after every pass.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::subsample_examples;
use crate::error::{Result, SoupError};
use crate::index::{EmbeddingRecord, Index, NeighborHit};
use crate::priming::{classify_boc, classify_concat, Neighbor, Prediction, WeightingKind};
use crate::scorer::{
    embed, zero_shot_distribution, CalibrationTable, Calibrator, Encoder, ScoreRequest, Scorer,
};
use crate::task::{Example, LabelDistribution, LabelId, TaskConfig};

/// Neighbor counts evaluated in the reference setup.
pub const K_PRESETS: [usize; 3] = [3, 10, 50];
pub const DEFAULT_TOKEN_BUDGET: usize = 120;
pub const DEFAULT_CAP: usize = 10_000;
pub const DEFAULT_ITERATIONS: usize = 3;

const EMBED_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Bag of contexts: one context per neighbor, distributions averaged.
    #[default]
    Boc,
    /// All neighbors concatenated into one context.
    Concat,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Boc => "boc",
            Strategy::Concat => "concat",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "boc" | "bag-of-contexts" => Ok(Strategy::Boc),
            "concat" => Ok(Strategy::Concat),
            other => Err(format!("unknown strategy {other:?} (boc|concat)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoupConfig {
    pub task: String,
    pub k: usize,
    pub strategy: Strategy,
    pub weighting: WeightingKind,
    /// Refinement passes over the pool after the initial self-prediction.
    pub iterations: usize,
    /// Per-part token budget sent to the scorer; `None` disables truncation.
    pub example_token_budget: Option<usize>,
    pub pool_cap: usize,
    pub test_cap: usize,
    pub seed: u64,
}

impl Default for SoupConfig {
    fn default() -> Self {
        SoupConfig {
            task: "imdb".into(),
            k: 10,
            strategy: Strategy::Boc,
            weighting: WeightingKind::Uniform,
            iterations: DEFAULT_ITERATIONS,
            example_token_budget: Some(DEFAULT_TOKEN_BUDGET),
            pool_cap: DEFAULT_CAP,
            test_cap: DEFAULT_CAP,
            seed: 42,
        }
    }
}

impl SoupConfig {
    pub fn for_task(task: &TaskConfig) -> Self {
        SoupConfig {
            task: task.name().to_string(),
            ..Default::default()
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_weighting(mut self, weighting: WeightingKind) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(SoupError::Config("k must be at least 1".into()));
        }
        if self.pool_cap == 0 || self.test_cap == 0 {
            return Err(SoupError::Config(
                "pool and test caps must be at least 1".into(),
            ));
        }
        if self.example_token_budget == Some(0) {
            return Err(SoupError::Config("token budget must be at least 1".into()));
        }
        Ok(())
    }
}

pub type SelfPredictions = BTreeMap<String, Prediction>;

/// Indexed unlabeled examples with their current self-predicted labels.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool {
    examples: BTreeMap<String, Example>,
    index: Index,
    self_predictions: SelfPredictions,
}

impl UnlabeledPool {
    /// All three parts must cover the same ids, and every stored label must
    /// be the argmax of its stored distribution.
    pub fn new(
        examples: impl IntoIterator<Item = Example>,
        index: Index,
        self_predictions: SelfPredictions,
    ) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for x in examples {
            let id = x.id.clone();
            if by_id.insert(id.clone(), x).is_some() {
                return Err(SoupError::Validation(format!("duplicate pool id {id:?}")));
            }
        }
        if by_id.len() != index.len() || by_id.keys().any(|id| !index.contains(id)) {
            return Err(SoupError::Validation(
                "pool examples and embedding index cover different ids".into(),
            ));
        }
        if self_predictions.len() != by_id.len()
            || self_predictions.keys().any(|id| !by_id.contains_key(id))
        {
            return Err(SoupError::Validation(
                "self-predictions and pool examples cover different ids".into(),
            ));
        }
        check_predictions(&self_predictions)?;
        Ok(UnlabeledPool {
            examples: by_id,
            index,
            self_predictions,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.examples.keys()
    }

    pub fn example(&self, id: &str) -> Option<&Example> {
        self.examples.get(id)
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.examples.values()
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn self_predictions(&self) -> &SelfPredictions {
        &self.self_predictions
    }

    pub fn self_prediction(&self, id: &str) -> Option<&Prediction> {
        self.self_predictions.get(id)
    }

    /// Replace every self-prediction at once.
    pub fn with_self_predictions(self, self_predictions: SelfPredictions) -> Result<Self> {
        UnlabeledPool::new(self.examples.into_values(), self.index, self_predictions)
    }

    /// Write `{id: {"distribution": [...], "label": n}}`.
    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        save_sidecar(&self.self_predictions, path)
    }
}

fn check_predictions(predictions: &SelfPredictions) -> Result<()> {
    for (id, p) in predictions {
        if p.label >= p.distribution.len() || p.distribution.argmax() != p.label {
            return Err(SoupError::Validation(format!(
                "self-prediction for {id:?}: label {} is not the argmax of its distribution",
                p.label
            )));
        }
    }
    Ok(())
}

pub fn save_sidecar(predictions: &SelfPredictions, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, predictions).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_sidecar(path: impl AsRef<Path>) -> Result<SelfPredictions> {
    let path = path.as_ref();
    let file = BufReader::new(File::open(path)?);
    let predictions: SelfPredictions = serde_json::from_reader(file).map_err(|e| {
        SoupError::Validation(format!("self-prediction file {}: {e}", path.display()))
    })?;
    check_predictions(&predictions)?;
    Ok(predictions)
}

/// Prediction for one input, with the neighbors it was primed on.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub id: String,
    pub prediction: Prediction,
    pub neighbors: Vec<NeighborHit>,
}

/// Result of iterative refinement.
#[derive(Clone, Debug)]
pub struct IterationOutcome {
    pub pool: UnlabeledPool,
    /// Number of pool labels that changed in each pass.
    pub label_changes: Vec<usize>,
}

/// A task bound to a scorer, an encoder and a configuration.
pub struct Soup<S, E> {
    scorer: S,
    encoder: E,
    task: TaskConfig,
    config: SoupConfig,
    calibrator: Calibrator,
}

impl<S: Scorer, E: Encoder> Soup<S, E> {
    pub fn new(scorer: S, encoder: E, task: TaskConfig, mut config: SoupConfig) -> Result<Self> {
        config.validate()?;
        config.task = task.name().to_string();
        Ok(Soup {
            scorer,
            encoder,
            task,
            config,
            calibrator: Calibrator::new(),
        })
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn config(&self) -> &SoupConfig {
        &self.config
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    /// Empty-input calibration, scored once and cached.
    pub fn calibration(&self) -> Result<Arc<CalibrationTable>> {
        self.calibrator.get(&self.scorer, &self.task)
    }

    fn budget(&self) -> Option<usize> {
        self.config.example_token_budget
    }

    /// Calibrated zero-shot prediction on the bare pattern.
    pub fn prompt_only(&self, x: &Example) -> Result<Prediction> {
        let calib = self.calibration()?;
        let request =
            ScoreRequest::for_masked(&self.task, &self.task.render_pattern(x)?, self.budget());
        Ok(zero_shot_distribution(&self.scorer, &self.task, &request, &calib)?.into())
    }

    fn embed_all(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(EMBED_BATCH) {
            out.extend(embed(&self.encoder, chunk)?);
        }
        Ok(out)
    }

    /// Subsample to `pool_cap`, embed, index and self-label the pool.
    pub fn precompute_pool(&self, raw: &[Example]) -> Result<UnlabeledPool> {
        let examples = subsample_examples(raw, self.config.pool_cap, self.config.seed);
        if examples.is_empty() {
            return Err(SoupError::Domain("unlabeled pool is empty".into()));
        }
        let texts: Vec<String> = examples.iter().map(Example::embedding_text).collect();
        let vectors = self.embed_all(&texts)?;
        let records = examples
            .iter()
            .zip(vectors)
            .map(|(x, v)| EmbeddingRecord::new(x.id.clone(), v))
            .collect();
        let index = Index::build(records)?;

        let predictions = examples
            .par_iter()
            .map(|x| Ok((x.id.clone(), self.prompt_only(x)?)))
            .collect::<Result<SelfPredictions>>()?;
        UnlabeledPool::new(examples, index, predictions)
    }

    /// Retrieve, prime and aggregate for one input.
    pub fn classify(&self, pool: &UnlabeledPool, x: &Example) -> Result<Classification> {
        let query = embed(&self.encoder, &[x.embedding_text()])?.remove(0);
        self.classify_with(pool, pool.self_predictions(), x, &query)
    }

    /// [`Soup::classify`] over many inputs in parallel; output keeps input
    /// order.
    pub fn classify_all(
        &self,
        pool: &UnlabeledPool,
        xs: &[Example],
    ) -> Result<Vec<Classification>> {
        let texts: Vec<String> = xs.iter().map(Example::embedding_text).collect();
        let queries = if texts.is_empty() {
            Vec::new()
        } else {
            self.embed_all(&texts)?
        };
        xs.par_iter()
            .zip(queries.par_iter())
            .map(|(x, q)| self.classify_with(pool, pool.self_predictions(), x, q))
            .collect()
    }

    fn classify_with(
        &self,
        pool: &UnlabeledPool,
        labels: &SelfPredictions,
        x: &Example,
        query: &[f32],
    ) -> Result<Classification> {
        if pool.is_empty() {
            return Err(SoupError::Domain("unlabeled pool is empty".into()));
        }
        let mut exclude = HashSet::new();
        if pool.example(&x.id).is_some_and(|own| same_input(own, x)) {
            exclude.insert(x.id.clone());
        }
        let hits = pool.index.search_knn(query, self.config.k, &exclude)?;
        if hits.is_empty() {
            return Err(SoupError::Domain(format!(
                "no neighbors available for {:?}",
                x.id
            )));
        }
        let neighbors = hits
            .iter()
            .map(|h| {
                let example = pool.examples[&h.id].clone();
                let predicted_label = labels
                    .get(&h.id)
                    .ok_or_else(|| {
                        SoupError::Validation(format!("no self-prediction for {:?}", h.id))
                    })?
                    .label;
                Ok(Neighbor {
                    example,
                    similarity: h.similarity,
                    predicted_label,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let calib = self.calibration()?;
        let prediction = match self.config.strategy {
            Strategy::Boc => classify_boc(
                &self.scorer,
                &self.task,
                &neighbors,
                x,
                self.config.weighting,
                &calib,
                self.budget(),
            )?,
            Strategy::Concat => classify_concat(
                &self.scorer,
                &self.task,
                &neighbors,
                x,
                &calib,
                self.budget(),
            )?,
        };
        Ok(Classification {
            id: x.id.clone(),
            prediction,
            neighbors: hits,
        })
    }

    fn check_iterable(&self, pool: &UnlabeledPool) -> Result<()> {
        if self.config.weighting != WeightingKind::Uniform {
            return Err(SoupError::Config(
                "iterative refinement uses uniform weighting".into(),
            ));
        }
        if pool.len() < 2 {
            return Err(SoupError::Domain(
                "iterative refinement needs at least two pool examples".into(),
            ));
        }
        Ok(())
    }

    fn reclassify(&self, pool: &UnlabeledPool, id: &str) -> Result<Prediction> {
        let x = &pool.examples[id];
        let query = pool
            .index
            .vector(id)
            .ok_or_else(|| SoupError::Validation(format!("{id:?} missing from index")))?;
        Ok(self
            .classify_with(pool, &pool.self_predictions, x, query)?
            .prediction)
    }

    /// One refinement pass, visiting pool examples sequentially in `order`.
    /// Every reclassification reads the labels held by `pool`, so the result
    /// does not depend on `order`.
    pub fn reclassify_pool(
        &self,
        pool: &UnlabeledPool,
        order: &[String],
    ) -> Result<SelfPredictions> {
        self.check_iterable(pool)?;
        let mut out = SelfPredictions::new();
        for id in order {
            if !pool.examples.contains_key(id) {
                return Err(SoupError::Domain(format!("{id:?} is not in the pool")));
            }
            out.insert(id.clone(), self.reclassify(pool, id)?);
        }
        if out.len() != pool.len() {
            return Err(SoupError::Domain(
                "processing order must visit every pool example once".into(),
            ));
        }
        Ok(out)
    }

    /// Reclassify the pool against itself `config.iterations` times.
    pub fn iterative_soup(&self, pool: UnlabeledPool) -> Result<IterationOutcome> {
        let mut pool = pool;
        let mut label_changes = Vec::with_capacity(self.config.iterations);
        if self.config.iterations == 0 {
            return Ok(IterationOutcome {
                pool,
                label_changes,
            });
        }
        self.check_iterable(&pool)?;
        for _ in 0..self.config.iterations {
            let ids: Vec<&String> = pool.examples.keys().collect();
            let next = ids
                .par_iter()
                .map(|id| Ok(((*id).clone(), self.reclassify(&pool, id)?)))
                .collect::<Result<SelfPredictions>>()?;
            let changed = next
                .iter()
                .filter(|(id, p)| pool.self_predictions[*id].label != p.label)
                .count();
            label_changes.push(changed);
            pool = pool.with_self_predictions(next)?;
        }
        Ok(IterationOutcome {
            pool,
            label_changes,
        })
    }
}

/// Same example: equal ids and equal input text.
fn same_input(a: &Example, b: &Example) -> bool {
    a.id == b.id && a.text == b.text && a.text_pair == b.text_pair
}

/// One classified example in a run report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: LabelId,
    pub label_name: String,
    /// Verbalizer token of `label`.
    pub token: String,
    pub distribution: LabelDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<LabelId>,
    #[serde(default)]
    pub neighbors: Vec<NeighborHit>,
}

/// JSON run report: config echo, per-example predictions and accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task: String,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_accuracy: Option<f64>,
    pub config: SoupConfig,
    pub seed: u64,
    pub predictions: Vec<PredictionRecord>,
}

impl RunReport {
    /// Build a report; accuracy is filled in when every example has a gold
    /// label.
    pub fn new(
        task: &TaskConfig,
        config: &SoupConfig,
        examples: &[Example],
        results: &[Classification],
    ) -> Self {
        let gold: HashMap<&str, Option<LabelId>> = examples
            .iter()
            .map(|x| (x.id.as_str(), x.gold_label))
            .collect();
        let predictions: Vec<PredictionRecord> = results
            .iter()
            .map(|c| PredictionRecord {
                id: c.id.clone(),
                label: c.prediction.label,
                label_name: task
                    .label_name(c.prediction.label)
                    .unwrap_or("")
                    .to_string(),
                token: task.verbalize(c.prediction.label).unwrap_or("").to_string(),
                distribution: c.prediction.distribution.clone(),
                gold_label: gold.get(c.id.as_str()).copied().flatten(),
                neighbors: c.neighbors.clone(),
            })
            .collect();
        let accuracy = accuracy_of(&predictions);
        RunReport {
            task: task.name().to_string(),
            n: predictions.len(),
            accuracy,
            baseline_accuracy: None,
            config: config.clone(),
            seed: config.seed,
            predictions,
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn accuracy_of(records: &[PredictionRecord]) -> Option<f64> {
    if records.is_empty() || records.iter().any(|r| r.gold_label.is_none()) {
        return None;
    }
    let correct = records
        .iter()
        .filter(|r| r.gold_label == Some(r.label))
        .count();
    Some(correct as f64 / records.len() as f64)
}
