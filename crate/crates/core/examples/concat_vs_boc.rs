//! The two priming strategies side by side. With one neighbor they build
//! the same context; with more, bag-of-contexts scores each neighbor
//! separately while concatenation scores a single long context.
//!
//! Run with: cargo run --example concat_vs_boc

use soup::prelude::*;
use soup::priming::{build_boc_context, build_concat_context};
use soup::scorer::assemble_whitespace_context;

fn main() -> Result<()> {
    let agnews = builtin_task("agnews").unwrap();
    let x = Example::new("x", "Striker signs a three-year deal with the champions.");
    let neighbors = vec![
        Neighbor {
            example: Example::new("a", "Late goal settles the derby."),
            similarity: 0.82,
            predicted_label: 1,
        },
        Neighbor {
            example: Example::new("b", "Shares slide after earnings miss."),
            similarity: 0.41,
            predicted_label: 2,
        },
    ];

    let mut scorer = MockScorer::named("strategies");
    let calib = CalibrationTable::new(&agnews, vec![0.25; 4])?;
    let boc_scores = [[0.1, 0.7, 0.1, 0.1], [0.2, 0.3, 0.4, 0.1]];
    for (n, s) in neighbors.iter().zip(boc_scores) {
        let context = assemble_whitespace_context(&build_boc_context(&agnews, n, &x, Some(120))?)?;
        for (token, p) in agnews.verbalizer_tokens().iter().zip(s) {
            scorer.insert(context.as_str(), token.as_str(), p);
        }
    }
    let concat_request = build_concat_context(&agnews, &neighbors, &x, Some(120))?;
    let concat_context = assemble_whitespace_context(&concat_request)?;
    for (token, p) in agnews.verbalizer_tokens().iter().zip([0.1, 0.6, 0.2, 0.1]) {
        scorer.insert(concat_context.as_str(), token.as_str(), p);
    }

    let boc = classify_boc(
        &scorer,
        &agnews,
        &neighbors,
        &x,
        WeightingKind::Uniform,
        &calib,
        Some(120),
    )?;
    let weighted = classify_boc(
        &scorer,
        &agnews,
        &neighbors,
        &x,
        WeightingKind::Similarity,
        &calib,
        Some(120),
    )?;
    let concat = classify_concat(&scorer, &agnews, &neighbors, &x, &calib, Some(120))?;
    println!("concat context: {concat_context}");
    println!("boc uniform:    {:?}", boc.distribution.probs());
    println!("boc similarity: {:?}", weighted.distribution.probs());
    println!("concat:         {:?}", concat.distribution.probs());

    let one = &neighbors[..1];
    let a = classify_boc(
        &scorer,
        &agnews,
        one,
        &x,
        WeightingKind::Uniform,
        &calib,
        Some(120),
    )?;
    let b = classify_concat(&scorer, &agnews, one, &x, &calib, Some(120))?;
    println!("k=1 agree: {}", a == b);
    Ok(())
}
