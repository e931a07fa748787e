//! Accuracy of neighbor priming against the prompt-only baseline on a
//! constructed task. Pool reviews are easy for the mock model, bare test
//! prompts are not, and a primed context follows its demonstration label.
//!
//! Run with: cargo run --example synthetic_eval

use std::collections::HashMap;

use soup::prelude::*;
use soup::priming::build_boc_context;
use soup::scorer::{assemble_whitespace_context, hash_unit_vector};

const DIM: usize = 16;

fn embedding(text: &str, label: LabelId) -> Vec<f32> {
    let mut v: Vec<f32> = hash_unit_vector(text, DIM)
        .iter()
        .map(|x| 0.3 * x)
        .collect();
    v[label] += 1.0;
    v
}

fn main() -> Result<()> {
    let imdb = builtin_task("imdb").unwrap();
    let pool: Vec<Example> = (0..40)
        .map(|i| {
            let word = if i % 2 == 1 { "loved" } else { "hated" };
            Example::new(format!("p{i}"), format!("I {word} film {i}.")).with_label(i % 2)
        })
        .collect();
    let test: Vec<Example> = (0..40)
        .map(|i| {
            Example::new(format!("t{i}"), format!("Film {i} was something.")).with_label(i % 2)
        })
        .collect();

    let mut scorer = MockScorer::named("synthetic")
        .with_scores("The movie is [MASK].", &[("bad", 0.5), ("good", 0.5)]);
    let mut encoder = MockEncoder::new(DIM);
    let mut set = |context: &str, label: LabelId, p: f64| {
        scorer.insert(context, imdb.verbalize(label).unwrap(), p);
        scorer.insert(context, imdb.verbalize(1 - label).unwrap(), 1.0 - p);
    };
    for p in &pool {
        let y = p.gold_label.unwrap();
        set(imdb.render_pattern(p)?.as_str(), y, 0.9);
        let neighbor = Neighbor {
            example: p.clone(),
            similarity: 1.0,
            predicted_label: y,
        };
        for t in &test {
            let context =
                assemble_whitespace_context(&build_boc_context(&imdb, &neighbor, t, Some(120))?)?;
            set(&context, y, 0.8);
        }
    }
    for x in pool.iter().chain(&test) {
        encoder.insert(x.text.as_str(), embedding(&x.text, x.gold_label.unwrap()))?;
    }

    let soup = Soup::new(
        scorer,
        encoder,
        imdb.clone(),
        SoupConfig::for_task(&imdb).with_k(10),
    )?;
    let unlabeled: Vec<Example> = pool
        .iter()
        .map(|x| Example {
            gold_label: None,
            ..x.clone()
        })
        .collect();
    let index = soup.precompute_pool(&unlabeled)?;
    let data = Dataset::new(&imdb, test)?;

    let primed: HashMap<String, LabelId> = soup
        .classify_all(&index, &data.examples)?
        .into_iter()
        .map(|c| (c.id, c.prediction.label))
        .collect();
    let mut baseline = HashMap::new();
    for x in &data.examples {
        baseline.insert(x.id.clone(), soup.prompt_only(x)?.label);
    }
    println!("prompt-only accuracy: {:.3}", accuracy(&baseline, &data)?);
    println!("primed accuracy:      {:.3}", accuracy(&primed, &data)?);
    Ok(())
}
