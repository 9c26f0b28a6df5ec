//! Trains PrefRec into a run directory, then evaluates the epoch
//! snapshots into a learning curve.
//!
//! `cargo run --release --example learning_curve [out_dir]`

use std::path::PathBuf;

use prefrec::config::RunConfig;
use prefrec::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prefrec-learning-curve"));
    let mut cfg = RunConfig::preset("desk")?;
    cfg.epochs = 3;
    run::cmd_train(&cfg, &out, false)?;
    let summary = run::cmd_eval(&cfg, &out, None)?;
    println!("final ncis {:.4} +- {:.4}", summary.report.score, summary.report.ci95);
    for p in summary.curve {
        println!("step {:>5} cum_level {:.2} +- {:.2}", p.step, p.mean, p.stderr);
    }
    println!("run directory: {}", out.display());
    Ok(())
}
