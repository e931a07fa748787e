//! Render cloze prompts for the built-in tasks and for a task loaded from
//! TOML.
//!
//! Run with: cargo run --example render_patterns

use soup::prelude::*;

fn main() -> Result<()> {
    let review = Example::new("r1", "Not worth watching.");
    let question = Example::new("q1", "Why is the sky blue?").with_pair("Rayleigh scattering.");

    for task in builtin_tasks() {
        let x = if task.arity() == 2 {
            &question
        } else {
            &review
        };
        println!("{}", task.name());
        println!("  masked:      {}", task.render_pattern(x)?);
        println!("  filled (0):  {}", task.render_filled_pattern(x, 0)?);
        println!("  calibration: {}", task.render_calibration_input());
        println!("  verbalizer:  {}", task.verbalizer_tokens().join(", "));
    }

    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/examples/data/sample_task.toml"
    );
    let tickets = TaskConfig::from_toml_file(path)?;
    let x = Example::new("t1", "The app crashes when I save");
    println!("{}", tickets.name());
    println!("  masked:      {}", tickets.render_pattern(&x)?);
    Ok(())
}
