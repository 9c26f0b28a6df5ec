//! Stops a run halfway, saves a checkpoint file, resumes from it and
//! checks the result against an uninterrupted run bit for bit.
//!
//! `cargo run --release --example checkpoint_resume`

use prefrec::config::RunConfig;
use prefrec::nn::Checkpoint;
use prefrec::run::{self, RunData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = RunConfig::preset("desk")?;
    cfg.epochs = 2;
    cfg.iterations = 200;
    cfg.eval_interval = 100;
    let data = RunData::from(run::generate(&cfg)?);
    let (reward, _) = run::pretrain(&cfg, &data.preferences)?;

    let mut straight = run::build_trainer(&cfg, &data, reward.clone())?;
    straight.run(None, |_, _| Ok(()))?;

    let path = std::env::temp_dir().join("prefrec-resume.ckpt");
    let mut first = run::build_trainer(&cfg, &data, reward.clone())?;
    first.run_until(200, None, |_, _| Ok(()))?;
    first.checkpoint().save(&path)?;
    println!("saved step {} to {}", first.step, path.display());

    let mut resumed = run::build_trainer(&cfg, &data, reward)?;
    resumed.restore(&Checkpoint::load(&path)?)?;
    resumed.run(None, |_, _| Ok(()))?;

    let same = resumed.checkpoint().to_bytes() == straight.checkpoint().to_bytes();
    println!("resumed run matches uninterrupted run: {same}");
    Ok(())
}
