//! Trains PrefRec in memory and prints every metrics row.
//!
//! `cargo run --release --example train_prefrec [task]`

use prefrec::config::RunConfig;
use prefrec::run::{self, RunData};
use prefrec::sim::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.task = std::env::args().nth(1).map(|s| s.parse::<Task>()).transpose()?.unwrap_or(Task::Mixture);
    let data = RunData::from(run::generate(&cfg)?);
    let (reward, _) = run::pretrain(&cfg, &data.preferences)?;
    let out = run::train(&cfg, &data, reward, true)?;
    if let Some(p) = out.start {
        println!("start ncis {:.4} cum_level {:.2}", p.ncis, p.cum_level);
    }
    for r in &out.rows {
        println!(
            "step {} critic {:.4} value {:.4} actor {:.4} ncis {:.4} cum_level {:.2}",
            r.step, r.critic_loss, r.value_loss, r.actor_loss, r.ncis, r.cum_level
        );
    }
    Ok(())
}
