//! Simulates the logged dataset and prints its shape and level histogram.
//!
//! `cargo run --release --example generate_dataset [seed]`

use prefrec::config::RunConfig;
use prefrec::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let d = run::generate(&cfg)?;
    println!(
        "{} training users, {} held-out users, {} transitions, {} preference pairs",
        d.train.len(),
        d.heldout.len(),
        d.replay.len(),
        d.preferences.len()
    );
    println!("level  depth  frequency");
    for (level, (depth, freq)) in d.level_histogram().iter().enumerate() {
        println!("{level:>5}  {depth:.3}  {freq:.3}");
    }
    Ok(())
}
