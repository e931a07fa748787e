//! Iterative refinement of pool self-labels on a two-example pool where
//! each example is the other's only neighbor.
//!
//! Run with: cargo run --example iterative

use soup::data::load_jsonl;
use soup::prelude::*;

fn main() -> Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/iterate");
    let imdb = builtin_task("imdb").unwrap();
    let raw = load_jsonl(format!("{dir}/pool.jsonl"), &imdb)?.examples;

    for iterations in 0..=3 {
        let (scorer, encoder) = MockFixture::from_json_file(format!("{dir}/mock.json"))?.build()?;
        let config = SoupConfig {
            iterations,
            ..SoupConfig::for_task(&imdb).with_k(1)
        };
        let soup = Soup::new(scorer, encoder, imdb.clone(), config)?;
        let outcome = soup.iterative_soup(soup.precompute_pool(&raw)?)?;
        let labels: Vec<String> = outcome
            .pool
            .self_predictions()
            .iter()
            .map(|(id, p)| {
                format!(
                    "{id}={} {:?}",
                    imdb.verbalize(p.label).unwrap(),
                    p.distribution.probs()
                )
            })
            .collect();
        println!(
            "{iterations} iteration(s): {}  changes {:?}",
            labels.join("  "),
            outcome.label_changes
        );
    }
    Ok(())
}
