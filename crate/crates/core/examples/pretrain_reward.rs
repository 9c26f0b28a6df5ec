//! Pretrains the reward model on scripted-teacher preferences and prints
//! loss and ranking accuracy per epoch.
//!
//! `cargo run --release --example pretrain_reward`

use prefrec::config::RunConfig;
use prefrec::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::preset("desk")?;
    let d = run::generate(&cfg)?;
    let (_, rows) = run::pretrain(&cfg, &d.preferences)?;
    for r in rows {
        println!("epoch {} loss {:.4} accuracy {:.4}", r.epoch, r.loss, r.accuracy);
    }
    Ok(())
}
