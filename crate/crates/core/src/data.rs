//! JSONL datasets, seeded subsampling and accuracy.
//!
//! One JSON object per line:
//!
//! ```json
//! {"id": "r1", "text": "Great!", "label": 1}
//! {"text": "Q?", "text_pair": "A.", "label": 3}
//! ```
//!
//! `id` defaults to `line-<n>` (1-based), `text_pair` is required exactly
//! for two-field tasks, and `label` is an optional 0-based gold label.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};
use crate::task::{Example, LabelId, TaskConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub task: String,
    pub examples: Vec<Example>,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_pair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<i64>,
}

impl Dataset {
    pub fn new(task: &TaskConfig, examples: Vec<Example>) -> Result<Self> {
        let ds = Dataset {
            task: task.name().to_string(),
            examples,
        };
        ds.validate(task)?;
        Ok(ds)
    }

    fn validate(&self, task: &TaskConfig) -> Result<()> {
        let mut seen = HashSet::new();
        for x in &self.examples {
            if !seen.insert(x.id.as_str()) {
                return Err(SoupError::Validation(format!("duplicate id {:?}", x.id)));
            }
            check_example(task, x)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_gold_labels(&self) -> bool {
        self.examples.iter().all(|x| x.gold_label.is_some())
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for x in &self.examples {
            let record = JsonlRecord {
                id: Some(x.id.clone()),
                text: x.text.clone(),
                text_pair: x.text_pair.clone(),
                label: x.gold_label.map(|l| l as i64),
            };
            serde_json::to_writer(&mut w, &record).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_example(task: &TaskConfig, x: &Example) -> Result<()> {
    if let Some(label) = x.gold_label {
        if label >= task.num_labels() {
            return Err(SoupError::Validation(format!(
                "example {:?}: label {label} out of range for task {:?} ({} labels)",
                x.id,
                task.name(),
                task.num_labels()
            )));
        }
    }
    if x.arity() != task.arity() {
        return Err(SoupError::Validation(format!(
            "example {:?} has {} input field(s), task {:?} expects {}",
            x.id,
            x.arity(),
            task.name(),
            task.arity()
        )));
    }
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>, task: &TaskConfig) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    parse_jsonl(BufReader::new(file), task)
}

pub fn parse_jsonl<R: BufRead>(reader: R, task: &TaskConfig) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| SoupError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let gold_label = match record.label {
            None => None,
            Some(l) if l >= 0 && (l as u64) < task.num_labels() as u64 => Some(l as LabelId),
            Some(l) => {
                return Err(SoupError::Validation(format!(
                    "line {line_no}: label {l} out of range for task {:?} ({} labels)",
                    task.name(),
                    task.num_labels()
                )))
            }
        };
        examples.push(Example {
            id: record.id.unwrap_or_else(|| format!("line-{line_no}")),
            text: record.text,
            text_pair: record.text_pair,
            gold_label,
        });
    }
    Dataset::new(task, examples)
}

/// Seeded uniform sample of at most `cap` examples, without replacement,
/// in original order.
pub fn subsample_examples(examples: &[Example], cap: usize, seed: u64) -> Vec<Example> {
    if examples.len() <= cap {
        return examples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, examples.len(), cap).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| examples[i].clone()).collect()
}

pub fn subsample(ds: &Dataset, cap: usize, seed: u64) -> Result<Dataset> {
    if cap == 0 {
        return Err(SoupError::Domain("subsample cap must be at least 1".into()));
    }
    Ok(Dataset {
        task: ds.task.clone(),
        examples: subsample_examples(&ds.examples, cap, seed),
    })
}

/// Fraction of examples whose prediction equals the gold label.
pub fn accuracy(predictions: &HashMap<String, LabelId>, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(SoupError::Evaluation("empty dataset".into()));
    }
    let mut correct = 0usize;
    for x in &ds.examples {
        let gold = x.gold_label.ok_or_else(|| {
            SoupError::Evaluation(format!("example {:?} has no gold label", x.id))
        })?;
        let predicted = predictions.get(&x.id).ok_or_else(|| {
            SoupError::Evaluation(format!("no prediction for example {:?}", x.id))
        })?;
        if *predicted == gold {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}
