//! Fixtures shared by the integration tests.

#![allow(dead_code)]

pub mod service;

use std::path::PathBuf;

use soup::prelude::*;
use soup::priming::{build_boc_context, Neighbor};
use soup::scorer::{
    assemble_whitespace_context, hash_unit_vector, MockEncoder, MockFixture, MockScorer,
};
use soup::task::builtin_task;

pub const BAD: LabelId = 0;
pub const GOOD: LabelId = 1;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join("data")
}

pub fn imdb() -> TaskConfig {
    builtin_task("imdb").unwrap()
}

pub fn mock_from(dir: &str) -> (MockScorer, MockEncoder) {
    MockFixture::from_json_file(data_dir().join(dir).join("mock.json"))
        .unwrap()
        .build()
        .unwrap()
}

pub fn load(dir: &str, file: &str) -> Dataset {
    soup::data::load_jsonl(data_dir().join(dir).join(file), &imdb()).unwrap()
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(actual.len(), expected.len(), "{actual:?} vs {expected:?}");
    for (a, e) in actual.iter().zip(expected) {
        assert!(
            (a - e).abs() <= tol,
            "{actual:?} vs {expected:?} (tol {tol})"
        );
    }
}

/// `(r / c)` normalized, written out independently of the library.
pub fn calibrated(raw: &[f64], calib: &[f64]) -> Vec<f64> {
    let ratios: Vec<f64> = raw.iter().zip(calib).map(|(r, c)| r / c).collect();
    let total: f64 = ratios.iter().sum();
    ratios.iter().map(|r| r / total).collect()
}

/// Small review scenario: pool `n1..n3`, test input `x`.
pub fn reviews_soup(k: usize) -> Soup<MockScorer, MockEncoder> {
    let (scorer, encoder) = mock_from("reviews");
    let config = SoupConfig::for_task(&imdb()).with_k(k);
    Soup::new(scorer, encoder, imdb(), config).unwrap()
}

/// Balanced binary task where bare test prompts carry no signal, pool texts
/// are easy, and a primed context echoes the demonstration's label.
pub struct Synthetic {
    pub scorer: MockScorer,
    pub encoder: MockEncoder,
    pub fixture: MockFixture,
    pub pool: Vec<Example>,
    pub test: Vec<Example>,
}

pub const SYNTHETIC_DIM: usize = 16;

fn clustered(text: &str, label: LabelId) -> Vec<f32> {
    let noise = hash_unit_vector(text, SYNTHETIC_DIM);
    let mut v: Vec<f32> = noise.iter().map(|x| 0.3 * x).collect();
    v[label] += 1.0;
    v
}

fn set_scores(
    fixture: &mut MockFixture,
    task: &TaskConfig,
    context: String,
    label: LabelId,
    p: f64,
) {
    let row = fixture.scores.entry(context).or_default();
    row.insert(task.verbalize(label).unwrap().to_string(), p);
    row.insert(task.verbalize(1 - label).unwrap().to_string(), 1.0 - p);
}

pub fn synthetic(n_pool: usize, n_test: usize) -> Synthetic {
    let task = imdb();
    let mut fixture = MockFixture {
        name: Some("synthetic".into()),
        dim: Some(SYNTHETIC_DIM),
        ..MockFixture::default()
    };
    set_scores(&mut fixture, &task, "The movie is [MASK].".into(), BAD, 0.5);

    let pool: Vec<Example> = (0..n_pool)
        .map(|i| {
            let label = i % 2;
            let word = if label == GOOD { "loved" } else { "hated" };
            Example::new(format!("p{i:03}"), format!("Pool review {i}: I {word} it."))
                .with_label(label)
        })
        .collect();
    let test: Vec<Example> = (0..n_test)
        .map(|i| {
            Example::new(format!("t{i:03}"), format!("Test review number {i}.")).with_label(i % 2)
        })
        .collect();

    for x in pool.iter().chain(&test) {
        let label = x.gold_label.unwrap();
        fixture
            .embeddings
            .insert(x.text.clone(), clustered(&x.text, label));
    }
    for p in &pool {
        let label = p.gold_label.unwrap();
        let context = task.render_pattern(p).unwrap().into_string();
        set_scores(&mut fixture, &task, context, label, 0.9);
        let neighbor = Neighbor {
            example: p.clone(),
            similarity: 1.0,
            predicted_label: label,
        };
        for t in test.iter().chain(&pool).filter(|t| t.id != p.id) {
            let request = build_boc_context(&task, &neighbor, t, Some(120)).unwrap();
            let context = assemble_whitespace_context(&request).unwrap();
            set_scores(&mut fixture, &task, context, label, 0.8);
        }
    }
    let (scorer, encoder) = fixture.build().unwrap();
    Synthetic {
        scorer,
        encoder,
        fixture,
        pool,
        test,
    }
}
