//! Exact cosine k-NN over an in-memory index, with exclusion and
//! deterministic tie-breaking.
//!
//! Run with: cargo run --example knn_search

use std::collections::HashSet;

use soup::prelude::*;

fn main() -> Result<()> {
    let index = Index::build(vec![
        EmbeddingRecord::new("apple", vec![1.0, 0.1, 0.0]),
        EmbeddingRecord::new("pear", vec![0.9, 0.2, 0.0]),
        EmbeddingRecord::new("plum", vec![0.9, 0.2, 0.0]),
        EmbeddingRecord::new("car", vec![0.0, 0.1, 1.0]),
        EmbeddingRecord::new("bus", vec![0.1, 0.0, 0.9]),
    ])?;
    let query = [1.0, 0.15, 0.0];

    println!("top 3:");
    for hit in index.search_knn(&query, 3, &HashSet::new())? {
        println!("  {:<6} {:.6}", hit.id, hit.similarity);
    }

    // "pear" and "plum" are identical vectors; ties resolve by id.
    let exclude = HashSet::from(["apple".to_string()]);
    println!("top 2 without apple:");
    for hit in index.search_knn(&query, 2, &exclude)? {
        println!("  {:<6} {:.6}", hit.id, hit.similarity);
    }
    Ok(())
}
