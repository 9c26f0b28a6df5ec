use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefrec::config::{ConfigError, RunConfig};
use prefrec::run::{self, RunError};
use prefrec::sim::Task;
use prefrec::train::Algo;

/// Preference-based offline RL for long-term engagement.
#[derive(Debug, Parser)]
#[command(name = "prefrec", version = run::BUILD_ID)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the logged dataset into <out>/data.
    Generate(Common),
    /// Pretrain the reward model; writes reward.ckpt and pretrain.csv.
    Pretrain(Common),
    /// Train one algorithm under <out>/<algo>.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from <out>/<algo>/checkpoints/latest.ckpt.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint; writes eval.csv and curve.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/<algo>/final.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Expectile sweep and pretrain/fine-tune switches under <out>/ablate.
    Ablate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` file applied over the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    task: Option<Task>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path, "desk")?,
            None => RunConfig::preset("desk")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(algo) = self.algo {
            cfg.algo = algo;
        }
        if let Some(task) = self.task {
            cfg.task = task;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("PREFREC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::Invalid(format!("PREFREC_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))
}

fn execute(command: &Command) -> Result<(), RunError> {
    init_threads()?;
    match command {
        Command::Generate(c) => {
            let cfg = c.resolve()?;
            let d = run::cmd_generate(&cfg, &c.out)?;
            println!(
                "generated {} transitions, {} preference pairs, {} held-out users in {}",
                d.replay.len(),
                d.preferences.len(),
                d.heldout.len(),
                data_path(&c.out).display()
            );
        }
        Command::Pretrain(c) => {
            let cfg = c.resolve()?;
            for r in run::cmd_pretrain(&cfg, &c.out)? {
                println!("epoch {} loss {:.4} accuracy {:.4}", r.epoch, r.loss, r.accuracy);
            }
        }
        Command::Train { common: c, resume } => {
            let cfg = c.resolve()?;
            for r in run::cmd_train(&cfg, &c.out, *resume)? {
                println!(
                    "step {} epoch {} ncis {:.4} cum_level {:.3}",
                    r.step, r.epoch, r.ncis, r.cum_level
                );
            }
        }
        Command::Eval { common: c, checkpoint } => {
            let cfg = c.resolve()?;
            let s = run::cmd_eval(&cfg, &c.out, checkpoint.as_deref())?;
            let r = &s.report;
            println!(
                "{} {} ncis {:.4} +- {:.4} over {} users",
                r.algo, r.task, r.score, r.ci95, r.n_users
            );
            for p in &s.curve {
                println!("step {} cum_level {:.3} +- {:.3}", p.step, p.mean, p.stderr);
            }
        }
        Command::Ablate(c) => {
            let cfg = c.resolve()?;
            for r in run::cmd_ablate(&cfg, &c.out)? {
                println!(
                    "{} ncis {:.4} cum_level {:.3}",
                    r.name, r.final_row.ncis, r.final_row.cum_level
                );
            }
        }
    }
    Ok(())
}

fn data_path(out: &Path) -> PathBuf {
    out.join("data")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
