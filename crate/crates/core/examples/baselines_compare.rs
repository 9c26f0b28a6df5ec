//! Trains every algorithm on the same data and reward model and prints
//! their final scores.
//!
//! `cargo run --release --example baselines_compare`

use prefrec::config::RunConfig;
use prefrec::run::{self, RunData};
use prefrec::train::Algo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.epochs = 2;
    let data = RunData::from(run::generate(&cfg)?);
    let (reward, _) = run::pretrain(&cfg, &data.preferences)?;
    for algo in Algo::ALL {
        cfg.algo = algo;
        let out = run::train(&cfg, &data, reward.clone(), true)?;
        let last = out.last().expect("schedule has rows");
        println!("{algo:<8} ncis {:.4} cum_level {:.2}", last.ncis, last.cum_level);
    }
    Ok(())
}
