//! Scores a fresh policy and an imitation policy offline with NCIS and
//! prints the per-user confidence interval.
//!
//! `cargo run --release --example ncis_eval`

use prefrec::config::RunConfig;
use prefrec::run::{self, RunData};
use prefrec::train::Algo;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.epochs = 1;
    cfg.algo = Algo::Il;
    let data = RunData::from(run::generate(&cfg)?);
    let reward = run::init_reward(&cfg);
    let untrained = run::build_trainer(&cfg, &data, reward.clone())?.actor();
    let trained = run::train(&cfg, &data, reward, false)?.actor;
    for (name, actor) in [("initial", &untrained), ("imitation", &trained)] {
        let r = run::eval_report(&cfg, &data, actor)?;
        println!("{name:<10} ncis {:.4} +- {:.4} over {} users", r.score, r.ci95, r.n_users);
    }
    Ok(())
}
