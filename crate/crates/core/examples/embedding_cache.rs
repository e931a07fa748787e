//! Write an index to the binary embedding cache and read it back.
//!
//! Run with: cargo run --example embedding_cache

use std::collections::HashSet;

use soup::prelude::*;
use soup::scorer::hash_unit_vector;

fn main() -> Result<()> {
    let records: Vec<EmbeddingRecord> = (0..1000)
        .map(|i| {
            let id = format!("doc-{i:04}");
            let vector = hash_unit_vector(&id, 32);
            EmbeddingRecord::new(id, vector)
        })
        .collect();
    let index = Index::build(records)?;

    let path = std::env::temp_dir().join("soup-example.emb");
    index.save_cache(&path)?;
    let size = std::fs::metadata(&path)?.len();
    let loaded = Index::load_cache(&path)?;
    println!(
        "{} records, dim {}, {size} bytes at {}",
        loaded.len(),
        loaded.dim(),
        path.display()
    );
    println!("identical after reload: {}", loaded == index);

    let query = hash_unit_vector("doc-0042", 32);
    let hits = loaded.search_knn(&query, 3, &HashSet::new())?;
    for hit in hits {
        println!("  {} {:.6}", hit.id, hit.similarity);
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
