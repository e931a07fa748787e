use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_whitespace_context, Encoder, ScoreRequest, ScoreResponse, Scorer};
use crate::error::{Result, SoupError};

/// Table-driven scorer keyed by the exact truncated, space-joined context.
///
/// Entries are raw model scores and need not sum to one. Contexts missing
/// from the table, and candidates missing from a known context, score
/// `1 / |candidates|`.
#[derive(Debug, Default)]
pub struct MockScorer {
    name: String,
    table: HashMap<String, HashMap<String, f64>>,
    vocab: Option<HashSet<String>>,
    requests: AtomicUsize,
}

impl MockScorer {
    pub fn new() -> Self {
        MockScorer {
            name: "mock".into(),
            ..Default::default()
        }
    }

    pub fn named(name: impl Into<String>) -> Self {
        MockScorer {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Restrict candidates to `vocab`; others are rejected as unknown tokens.
    pub fn with_vocab<I, T>(mut self, vocab: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        self.vocab = Some(vocab.into_iter().map(Into::into).collect());
        self
    }

    pub fn insert(&mut self, context: impl Into<String>, candidate: impl Into<String>, score: f64) {
        self.table
            .entry(context.into())
            .or_default()
            .insert(candidate.into(), score);
    }

    pub fn with_scores(mut self, context: &str, scores: &[(&str, f64)]) -> Self {
        for (candidate, score) in scores {
            self.insert(context, *candidate, *score);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Number of `score_mask` calls answered so far.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Scorer for MockScorer {
    fn identity(&self) -> String {
        format!("mock:{}", self.name)
    }

    fn score_mask(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        if let Some(vocab) = &self.vocab {
            if let Some(c) = request.candidates.iter().find(|c| !vocab.contains(*c)) {
                return Err(SoupError::Protocol(format!(
                    "candidate {c:?} is not in the vocabulary"
                )));
            }
        }
        let context = assemble_whitespace_context(request)?;
        let fallback = 1.0 / request.candidates.len() as f64;
        let row = self.table.get(&context);
        let scores = request
            .candidates
            .iter()
            .map(|c| {
                let p = row.and_then(|r| r.get(c)).copied().unwrap_or(fallback);
                (c.clone(), p)
            })
            .collect();
        Ok(ScoreResponse { scores })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Deterministic pseudo-random unit vector derived from `text`.
pub fn hash_unit_vector(text: &str, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(text.as_bytes()));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

/// Encoder that looks texts up in a table and falls back to
/// [`hash_unit_vector`].
#[derive(Clone, Debug)]
pub struct MockEncoder {
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl MockEncoder {
    pub fn new(dim: usize) -> Self {
        MockEncoder {
            dim,
            table: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, text: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(SoupError::Domain(format!(
                "vector of dimension {} for a dimension-{} encoder",
                vector.len(),
                self.dim
            )));
        }
        self.table.insert(text.into(), vector);
        Ok(())
    }

    pub fn with_vector(mut self, text: &str, vector: Vec<f32>) -> Self {
        self.insert(text, vector)
            .expect("vector dimension matches encoder");
        self
    }
}

impl Encoder for MockEncoder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .unwrap_or_else(|| hash_unit_vector(t, self.dim))
            })
            .collect())
    }
}

/// On-disk description of a mock scorer and encoder.
///
/// ```json
/// {
///   "name": "reviews",
///   "scores": {"The movie is [MASK].": {"good": 0.2, "bad": 0.2}},
///   "embeddings": {"Not worth watching.": [1.0, 0.0]},
///   "dim": 2
/// }
/// ```
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MockFixture {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, Vec<f32>>,
    /// Encoder dimension; defaults to the table vectors' length, else 8.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub vocab: Option<Vec<String>>,
}

impl MockFixture {
    pub const DEFAULT_DIM: usize = 8;

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&raw).map_err(|e| {
            SoupError::Config(format!("mock fixture {}: {e}", path.as_ref().display()))
        })
    }

    pub fn build(&self) -> Result<(MockScorer, MockEncoder)> {
        let mut scorer = MockScorer::named(self.name.clone().unwrap_or_else(|| "fixture".into()));
        if let Some(vocab) = &self.vocab {
            scorer = scorer.with_vocab(vocab.iter().cloned());
        }
        for (context, row) in &self.scores {
            for (candidate, score) in row {
                if !score.is_finite() || *score < 0.0 || *score > 1.0 {
                    return Err(SoupError::Config(format!(
                        "mock score {score} for {candidate:?} outside [0, 1]"
                    )));
                }
                scorer.insert(context.as_str(), candidate.as_str(), *score);
            }
        }
        let dim = self
            .dim
            .or_else(|| self.embeddings.values().next().map(Vec::len))
            .unwrap_or(Self::DEFAULT_DIM);
        let mut encoder = MockEncoder::new(dim);
        for (text, vector) in &self.embeddings {
            encoder.insert(text.as_str(), vector.clone())?;
        }
        Ok((scorer, encoder))
    }
}
