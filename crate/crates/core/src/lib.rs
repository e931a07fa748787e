//! Retrieval-augmented zero-shot text classification.
//!
//! An input is classified by retrieving semantically similar examples from an
//! unlabeled pool, labeling those neighbors zero-shot with a calibrated cloze
//! prompt, and priming a masked language model with each labeled neighbor in
//! turn. The per-neighbor label distributions are averaged into the final
//! prediction.
//!
//! The model and the sentence encoder sit behind [`scorer::Scorer`] and
//! [`scorer::Encoder`]; [`scorer::HttpScorer`] speaks the inference service's
//! JSON protocol and [`scorer::MockScorer`] drives everything from a table.
//!
//! ```
//! use soup::prelude::*;
//!
//! let imdb = builtin_task("imdb").unwrap();
//! let x = Example::new("x", "Not worth watching.");
//! assert_eq!(
//!     imdb.render_pattern(&x).unwrap().as_str(),
//!     "Not worth watching. The movie is [MASK]."
//! );
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod index;
pub mod pipeline;
pub mod priming;
pub mod scorer;
pub mod task;

pub use error::{Result, SoupError};

pub mod prelude {
    pub use crate::data::{accuracy, load_jsonl, subsample, Dataset};
    pub use crate::error::{Result, SoupError};
    pub use crate::index::{cosine, EmbeddingRecord, Index, NeighborHit};
    pub use crate::pipeline::{
        Classification, RunReport, SelfPredictions, Soup, SoupConfig, Strategy, UnlabeledPool,
    };
    pub use crate::priming::{
        aggregate, classify_boc, classify_concat, Neighbor, Prediction, WeightingKind,
    };
    pub use crate::scorer::{
        calibrate, zero_shot_distribution, CalibrationTable, Encoder, HttpScorer, MockEncoder,
        MockFixture, MockScorer, ScoreRequest, ScoreResponse, Scorer,
    };
    pub use crate::task::{
        builtin_task, builtin_tasks, Example, LabelDistribution, LabelId, TaskConfig,
    };
}
