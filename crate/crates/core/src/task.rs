//! Classification tasks: label sets, cloze patterns and verbalizers.
//!
//! A pattern is a template such as `"{text}. The movie is [MASK]."`. It holds
//! one `{text}` slot, an optional `{text_pair}` slot for two-field inputs, and
//! exactly one `[MASK]` placeholder. Rendering fills the slots and either
//! keeps the mask (a cloze question) or replaces it with a label's verbalizer
//! token (a demonstration).
//!
//! Rendering normalizes whitespace: runs collapse to a single space and the
//! result is trimmed. A template `.` that directly follows a slot is dropped
//! when the text before it is empty or already ends in `.`, `!` or `?`, so
//! `"Not worth watching."` renders as `"Not worth watching. The movie is
//! [MASK]."` rather than with a doubled period.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SoupError};

/// Model-agnostic mask placeholder used in templates.
pub const MASK: &str = "[MASK]";

/// 0-based label index.
pub type LabelId = usize;

/// Map a 1-based label number, as used by the public dataset releases, to an
/// internal label id.
pub fn from_one_based(label: usize) -> Option<LabelId> {
    label.checked_sub(1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_pair: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<LabelId>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            text_pair: None,
            gold_label: None,
        }
    }

    pub fn with_pair(mut self, text_pair: impl Into<String>) -> Self {
        self.text_pair = Some(text_pair.into());
        self
    }

    pub fn with_label(mut self, label: LabelId) -> Self {
        self.gold_label = Some(label);
        self
    }

    pub fn arity(&self) -> usize {
        if self.text_pair.is_some() {
            2
        } else {
            1
        }
    }

    /// Text handed to the sentence encoder: the raw input, with a pair joined
    /// by one space.
    pub fn embedding_text(&self) -> String {
        match &self.text_pair {
            Some(pair) => format!("{} {}", self.text, pair),
            None => self.text.clone(),
        }
    }
}

/// A rendered pattern that still contains exactly one mask placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskedText(String);

impl MaskedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for MaskedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Normalized probability vector indexed by label id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LabelDistribution(Vec<f64>);

pub const SUM_TOLERANCE: f64 = 1e-9;

impl LabelDistribution {
    /// Wrap an already-normalized vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SoupError::Domain("empty label distribution".into()));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(SoupError::Domain(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(SoupError::Domain(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(LabelDistribution(probs))
    }

    /// Normalize non-negative weights so they sum to one.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SoupError::Domain(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || total.is_nan() {
            return Err(SoupError::Domain("weights sum to zero".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        LabelDistribution(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, label: LabelId) -> f64 {
        self.0[label]
    }

    /// Most probable label; ties go to the lowest id.
    pub fn argmax(&self) -> LabelId {
        let mut best = 0;
        for (y, p) in self.0.iter().enumerate().skip(1) {
            if *p > self.0[best] {
                best = y;
            }
        }
        best
    }

    /// Internal constructor for convex combinations of valid distributions.
    pub(crate) fn from_convex(probs: Vec<f64>) -> Self {
        LabelDistribution(probs)
    }
}

impl TryFrom<Vec<f64>> for LabelDistribution {
    type Error = SoupError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LabelDistribution::new(v)
    }
}

impl From<LabelDistribution> for Vec<f64> {
    fn from(d: LabelDistribution) -> Self {
        d.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Text,
    TextPair,
    Mask,
}

/// A parsed cloze template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    template: String,
    segments: Vec<Segment>,
    arity: usize,
}

impl Pattern {
    pub fn parse(template: &str) -> Result<Self> {
        const TOKENS: [(&str, Segment); 3] = [
            ("{text_pair}", Segment::TextPair),
            ("{text}", Segment::Text),
            (MASK, Segment::Mask),
        ];

        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = template;
        'outer: while !rest.is_empty() {
            for (token, seg) in &TOKENS {
                if let Some(tail) = rest.strip_prefix(token) {
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(seg.clone());
                    rest = tail;
                    continue 'outer;
                }
            }
            let ch = rest.chars().next().unwrap();
            literal.push(ch);
            rest = &rest[ch.len_utf8()..];
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }

        let count = |s: &Segment| segments.iter().filter(|x| *x == s).count();
        match count(&Segment::Mask) {
            1 => {}
            n => {
                return Err(SoupError::Config(format!(
                    "pattern {template:?} has {n} mask placeholders, expected exactly one"
                )))
            }
        }
        if count(&Segment::Text) != 1 {
            return Err(SoupError::Config(format!(
                "pattern {template:?} must contain exactly one {{text}} slot"
            )));
        }
        let pairs = count(&Segment::TextPair);
        if pairs > 1 {
            return Err(SoupError::Config(format!(
                "pattern {template:?} has more than one {{text_pair}} slot"
            )));
        }

        Ok(Pattern {
            template: template.to_string(),
            segments,
            arity: 1 + pairs,
        })
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    fn render(&self, text: &str, text_pair: &str, mask_fill: &str) -> String {
        let mut out = String::new();
        let mut after_slot = false;
        for seg in &self.segments {
            match seg {
                Segment::Literal(lit) => {
                    let mut lit = lit.as_str();
                    if after_slot {
                        if let Some(tail) = lit.strip_prefix('.') {
                            let kept = out.trim_end();
                            if kept.is_empty() || kept.ends_with(['.', '!', '?']) {
                                lit = tail;
                            } else {
                                out.truncate(kept.len());
                            }
                        }
                    }
                    out.push_str(lit);
                    after_slot = false;
                }
                Segment::Text => {
                    out.push_str(text);
                    after_slot = true;
                }
                Segment::TextPair => {
                    out.push_str(text_pair);
                    after_slot = true;
                }
                Segment::Mask => {
                    out.push_str(mask_fill);
                    after_slot = false;
                }
            }
        }
        collapse_whitespace(&out)
    }
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pattern, verbalizer and label set for one classification task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskConfig {
    name: String,
    labels: Vec<String>,
    pattern: Pattern,
    verbalizer: Vec<String>,
}

impl TaskConfig {
    /// `verbalizer[y]` is the token for label `y`.
    pub fn new(
        name: impl Into<String>,
        labels: Vec<String>,
        pattern: &str,
        verbalizer: Vec<String>,
    ) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(SoupError::Config(format!("task {name:?} has no labels")));
        }
        if verbalizer.len() != labels.len() {
            return Err(SoupError::Config(format!(
                "task {name:?}: verbalizer has {} entries for {} labels",
                verbalizer.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for token in &verbalizer {
            if token.is_empty() || token.contains(char::is_whitespace) || token.contains(MASK) {
                return Err(SoupError::Config(format!(
                    "task {name:?}: verbalizer token {token:?} is not a single token"
                )));
            }
            if !seen.insert(token.as_str()) {
                return Err(SoupError::Config(format!(
                    "task {name:?}: verbalizer token {token:?} used for more than one label"
                )));
            }
        }
        let mut names = HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !names.insert(l.as_str())) {
            return Err(SoupError::Config(format!(
                "task {name:?}: duplicate label name {dup:?}"
            )));
        }
        let pattern = Pattern::parse(pattern)?;
        Ok(TaskConfig {
            name,
            labels,
            pattern,
            verbalizer,
        })
    }

    /// Load a task from a TOML file with keys `name`, `labels`, `pattern`
    /// and a `[verbalizer]` table mapping label names to tokens.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&raw)
    }

    pub fn from_toml_str(raw: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct TaskFile {
            name: String,
            labels: Vec<String>,
            pattern: String,
            verbalizer: BTreeMap<String, String>,
        }

        let file: TaskFile =
            toml::from_str(raw).map_err(|e| SoupError::Config(format!("task file: {e}")))?;
        let mut verbalizer = Vec::with_capacity(file.labels.len());
        for label in &file.labels {
            match file.verbalizer.get(label) {
                Some(token) => verbalizer.push(token.clone()),
                None => {
                    return Err(SoupError::Config(format!(
                        "task {:?}: no verbalizer token for label {label:?}",
                        file.name
                    )))
                }
            }
        }
        if let Some(extra) = file.verbalizer.keys().find(|k| !file.labels.contains(k)) {
            return Err(SoupError::Config(format!(
                "task {:?}: verbalizer names unknown label {extra:?}",
                file.name
            )));
        }
        TaskConfig::new(file.name, file.labels, &file.pattern, verbalizer)
    }

    /// A built-in task by name, or a TOML task file when `spec` is a path.
    pub fn resolve(spec: &str) -> Result<Self> {
        match builtin_task(spec) {
            Some(task) => Ok(task),
            None if Path::new(spec).is_file() => Self::from_toml_file(spec),
            None => Err(SoupError::Config(format!(
                "unknown task {spec:?} (built-ins: imdb, yelp, agnews, yahoo)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn pattern(&self) -> &Pattern {
        &self.pattern
    }

    pub fn arity(&self) -> usize {
        self.pattern.arity
    }

    pub fn label_name(&self, label: LabelId) -> Option<&str> {
        self.labels.get(label).map(String::as_str)
    }

    pub fn verbalize(&self, label: LabelId) -> Result<&str> {
        self.verbalizer
            .get(label)
            .map(String::as_str)
            .ok_or_else(|| {
                SoupError::Config(format!(
                    "label {label} out of range for task {:?} with {} labels",
                    self.name,
                    self.labels.len()
                ))
            })
    }

    pub fn verbalizer_tokens(&self) -> &[String] {
        &self.verbalizer
    }

    /// Inverse of [`TaskConfig::verbalize`].
    pub fn label_for_token(&self, token: &str) -> Option<LabelId> {
        self.verbalizer.iter().position(|t| t == token)
    }

    fn check_arity(&self, x: &Example) -> Result<()> {
        if x.arity() != self.arity() {
            return Err(SoupError::Config(format!(
                "example {:?} has {} input field(s), task {:?} expects {}",
                x.id,
                x.arity(),
                self.name,
                self.arity()
            )));
        }
        for field in std::iter::once(&x.text).chain(x.text_pair.as_ref()) {
            if field.contains(MASK) {
                return Err(SoupError::Config(format!(
                    "example {:?} contains the mask placeholder",
                    x.id
                )));
            }
        }
        Ok(())
    }

    /// The cloze question `P(x)`.
    pub fn render_pattern(&self, x: &Example) -> Result<MaskedText> {
        self.check_arity(x)?;
        Ok(MaskedText(self.pattern.render(
            &x.text,
            x.text_pair.as_deref().unwrap_or(""),
            MASK,
        )))
    }

    /// `P(x)` with the mask replaced by the verbalization of `label`.
    pub fn render_filled_pattern(&self, x: &Example, label: LabelId) -> Result<String> {
        self.check_arity(x)?;
        let token = self.verbalize(label)?;
        Ok(self
            .pattern
            .render(&x.text, x.text_pair.as_deref().unwrap_or(""), token))
    }

    /// The pattern with every input slot empty, used for calibration.
    pub fn render_calibration_input(&self) -> MaskedText {
        MaskedText(self.pattern.render("", "", MASK))
    }
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// IMDb, Yelp, AG's News and Yahoo Questions.
pub fn builtin_tasks() -> Vec<TaskConfig> {
    let build = |name: &str, labels: &[&str], pattern: &str, verbalizer: &[&str]| {
        TaskConfig::new(name, owned(labels), pattern, owned(verbalizer))
            .expect("built-in task is valid")
    };
    vec![
        build(
            "imdb",
            &["negative", "positive"],
            "{text}. The movie is [MASK].",
            &["bad", "good"],
        ),
        build(
            "yelp",
            &["1 star", "2 stars", "3 stars", "4 stars", "5 stars"],
            "{text}. In summary, the restaurant is [MASK].",
            &["terrible", "bad", "okay", "good", "great"],
        ),
        build(
            "agnews",
            &["World", "Sports", "Business", "Science/Tech"],
            "{text}. News Category: [MASK].",
            &["World", "Sports", "Business", "Science"],
        ),
        build(
            "yahoo",
            &[
                "Society & Culture",
                "Science & Mathematics",
                "Health",
                "Education & Reference",
                "Computers & Internet",
                "Sports",
                "Business & Finance",
                "Entertainment & Music",
                "Family & Relationships",
                "Politics & Government",
            ],
            "{text} {text_pair}. Question Category: [MASK].",
            &[
                "Society",
                "Science",
                "Health",
                "Education",
                "Computer",
                "Sports",
                "Business",
                "Entertainment",
                "Relationship",
                "Politics",
            ],
        ),
    ]
}

pub fn builtin_task(name: &str) -> Option<TaskConfig> {
    let key = name.to_ascii_lowercase().replace(['\'', '_', ' ', '-'], "");
    let key = match key.as_str() {
        "agsnews" | "ag" => "agnews",
        "yahooquestions" | "yahooanswers" => "yahoo",
        other => other,
    };
    builtin_tasks().into_iter().find(|t| t.name == key)
}
