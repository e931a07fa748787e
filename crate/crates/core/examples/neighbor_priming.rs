//! End-to-end classification of one review: embed and self-label a small
//! unlabeled pool, retrieve neighbors, prime one context per neighbor and
//! average the results.
//!
//! Run with: cargo run --example neighbor_priming

use soup::data::load_jsonl;
use soup::prelude::*;
use soup::priming::build_boc_context;

fn main() -> Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/reviews");
    let (scorer, encoder) = MockFixture::from_json_file(format!("{dir}/mock.json"))?.build()?;
    let imdb = builtin_task("imdb").unwrap();
    let config = SoupConfig::for_task(&imdb).with_k(2);
    let soup = Soup::new(scorer, encoder, imdb.clone(), config)?;

    let pool = soup.precompute_pool(&load_jsonl(format!("{dir}/pool.jsonl"), &imdb)?.examples)?;
    println!("self-labeled pool:");
    for x in pool.examples() {
        let p = pool.self_prediction(&x.id).unwrap();
        println!(
            "  {} {:?} -> {}",
            x.id,
            p.distribution.probs(),
            imdb.verbalize(p.label)?
        );
    }

    let x = load_jsonl(format!("{dir}/test.jsonl"), &imdb)?
        .examples
        .remove(0);
    let baseline = soup.prompt_only(&x)?;
    println!(
        "prompt only: {:?} -> {}",
        baseline.distribution.probs(),
        imdb.verbalize(baseline.label)?
    );

    let out = soup.classify(&pool, &x)?;
    for hit in &out.neighbors {
        let neighbor = Neighbor {
            example: pool.example(&hit.id).unwrap().clone(),
            similarity: hit.similarity,
            predicted_label: pool.self_prediction(&hit.id).unwrap().label,
        };
        let context = build_boc_context(&imdb, &neighbor, &x, Some(120))?;
        println!(
            "neighbor {} ({:.3}): {}",
            hit.id,
            hit.similarity,
            context.joined()
        );
    }
    println!(
        "primed: {:?} -> {}",
        out.prediction.distribution.probs(),
        imdb.verbalize(out.prediction.label)?
    );
    Ok(())
}
