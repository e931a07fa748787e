//! Calibrated zero-shot classification with a table-driven mock scorer.
//!
//! The bare prompt favors "good" in raw probability, but "good" is also the
//! more likely token for an empty input. Dividing by the empty-input scores
//! flips the decision.
//!
//! Run with: cargo run --example zero_shot

use soup::prelude::*;
use soup::scorer::normalize_ratios;

fn main() -> Result<()> {
    let imdb = builtin_task("imdb").unwrap();
    let x = Example::new("x", "It was fine, I guess.");
    let prompt = imdb.render_pattern(&x)?;

    let scorer = MockScorer::named("demo")
        .with_scores("The movie is [MASK].", &[("bad", 0.10), ("good", 0.40)])
        .with_scores(prompt.as_str(), &[("bad", 0.15), ("good", 0.35)]);

    let calib = calibrate(&scorer, &imdb)?;
    println!("calibration scores: {:?}", calib.scores);

    let request = ScoreRequest::for_masked(&imdb, &prompt, Some(120));
    let raw = score_raw(&scorer, &request)?;
    let uncalibrated = normalize_ratios(&raw, &[1.0, 1.0])?;
    let calibrated = zero_shot_distribution(&scorer, &imdb, &request, &calib)?;

    println!("prompt: {prompt}");
    for (label, name) in imdb.labels().iter().enumerate() {
        println!(
            "  {name:<8} raw {:.3}  uncalibrated {:.3}  calibrated {:.3}",
            raw[label],
            uncalibrated.get(label),
            calibrated.get(label)
        );
    }
    println!(
        "prediction: {} (without calibration: {})",
        imdb.labels()[calibrated.argmax()],
        imdb.labels()[uncalibrated.argmax()]
    );
    Ok(())
}

fn score_raw(scorer: &MockScorer, request: &ScoreRequest) -> Result<Vec<f64>> {
    let response = scorer.score_mask(request)?;
    request
        .candidates
        .iter()
        .map(|c| response.score(c))
        .collect()
}
