//! Runs the expectile sweep and the pretraining and fine-tuning switches
//! on a shortened schedule.
//!
//! `cargo run --release --example ablation [out_dir]`

use std::path::PathBuf;

use prefrec::config::RunConfig;
use prefrec::run;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("prefrec-ablation"));
    let mut cfg = RunConfig::preset("desk")?;
    cfg.epochs = 1;
    for r in run::cmd_ablate(&cfg, &out)? {
        println!(
            "{:<26} tau {:.1} ncis {:.4} cum_level {:.2}",
            r.name, r.tau, r.final_row.ncis, r.final_row.cum_level
        );
    }
    Ok(())
}
