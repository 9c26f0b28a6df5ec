//! The run pipeline behind the command line: dataset generation, reward
//! pretraining, training with checkpoints and resume, evaluation, and the
//! ablation grid, together with the files of a run directory.
//!
//! ```text
//! <out>/config.txt  seed.txt  build_id.txt
//! <out>/data/transitions.trn  preferences.prf  heldout.ses  levels.csv
//! <out>/reward.ckpt  pretrain.csv
//! <out>/<algo>/config.txt  seed.txt  build_id.txt  start.csv  metrics.csv
//! <out>/<algo>/checkpoints/latest.ckpt  step-<n>.ckpt
//! <out>/<algo>/final.ckpt  eval.csv  curve.csv
//! <out>/ablate/<cell>/...  <out>/ablate/summary.csv
//! ```

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::buffers::{BufferError, PreferenceBuffer, ReplayBuffer, DEFAULT_PREFERENCE_CAPACITY};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{
    confidence_interval, learning_curve, ncis_score, CurvePoint, EvalError, EvalPoint, EvalReport,
    Evaluator,
};
use crate::nn::{Checkpoint, CheckpointError};
use crate::policy::Actor;
use crate::reward::{RewardError, RewardModel};
use crate::rng::{stream_rng, streams};
use crate::sim::{
    generate_dataset, read_heldout, write_heldout, write_levels_csv, Dataset, HeldoutUser,
    SimError, World,
};
use crate::train::{load_actor, Agent, Algo, MetricsRow, TrainError, Trainer};

/// `git describe` of the build, or `unknown`.
pub const BUILD_ID: &str = env!("PREFREC_BUILD_ID");

const REWARD_INIT_INDEX: u64 = 4;
/// Evaluation seeds per learning-curve point, starting at the run seed.
pub const CURVE_SEEDS: u64 = 3;
pub const TAU_GRID: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("missing {0}")]
    Missing(String),
}

impl RunError {
    pub fn is_numerical(&self) -> bool {
        match self {
            RunError::Train(e) => e.is_numerical(),
            RunError::Reward(e) => e.is_numerical(),
            _ => false,
        }
    }

    /// 2 for configuration errors, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            e if e.is_numerical() => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), RunError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Everything training and evaluation read: the world, both buffers and the
/// held-out users.
#[derive(Debug, Clone)]
pub struct RunData {
    pub world: World,
    pub replay: ReplayBuffer,
    pub preferences: PreferenceBuffer,
    pub heldout: Vec<HeldoutUser>,
}

impl From<Dataset> for RunData {
    fn from(d: Dataset) -> Self {
        Self {
            world: d.world,
            replay: d.replay,
            preferences: d.preferences,
            heldout: d.heldout,
        }
    }
}

impl RunData {
    /// The first `eval_users` held-out users.
    pub fn eval_users(&self, cfg: &RunConfig) -> Result<&[HeldoutUser], RunError> {
        if self.heldout.len() < cfg.eval_users {
            return Err(ConfigError::Invalid(format!(
                "eval_users {} exceeds the {} held-out users",
                cfg.eval_users,
                self.heldout.len()
            ))
            .into());
        }
        Ok(&self.heldout[..cfg.eval_users])
    }

    pub fn evaluator<'a>(&'a self, cfg: &RunConfig) -> Result<Evaluator<'a>, RunError> {
        Ok(Evaluator {
            world: &self.world,
            users: self.eval_users(cfg)?,
            task: cfg.task,
            sessions: cfg.eval_sessions,
            model: cfg.propensity(),
            seed: cfg.seed,
        })
    }
}

/// Simulates the logged dataset for `cfg`.
pub fn generate(cfg: &RunConfig) -> Result<Dataset, RunError> {
    cfg.validate()?;
    let d = generate_dataset(&cfg.dataset_config(), cfg.seed)?;
    if d.replay.len() > cfg.replay_capacity {
        return Err(ConfigError::Invalid(format!(
            "{} logged transitions exceed replay_capacity {}",
            d.replay.len(),
            cfg.replay_capacity
        ))
        .into());
    }
    Ok(d)
}

/// Freshly initialized reward model of `cfg`.
pub fn init_reward(cfg: &RunConfig) -> RewardModel {
    RewardModel::new(
        cfg.state_dim,
        cfg.action_dim,
        cfg.hidden,
        cfg.hidden_layers,
        cfg.reward_lr,
        &mut stream_rng(cfg.seed, streams::INIT, REWARD_INIT_INDEX),
    )
}

/// Reward-model quality after each pretraining epoch; epoch 0 is the
/// initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRow {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch; NaN for epoch 0.
    pub train_loss: f64,
    /// Loss over the whole preference set after the epoch.
    pub loss: f64,
    /// Share of strict pairs the model orders correctly.
    pub accuracy: f64,
}

impl PretrainRow {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,loss,accuracy";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.train_loss, self.loss, self.accuracy)
    }
}

fn pretrain_row(
    rm: &RewardModel,
    prefs: &PreferenceBuffer,
    epoch: usize,
    train_loss: f64,
) -> Result<PretrainRow, RunError> {
    let accuracy = match rm.prediction_accuracy(prefs.records()) {
        Ok(a) => a,
        Err(RewardError::NoStrictPairs) => f64::NAN,
        Err(e) => return Err(e.into()),
    };
    Ok(PretrainRow {
        epoch,
        train_loss,
        loss: rm.mean_loss(prefs.records())?,
        accuracy,
    })
}

/// Pretrains a fresh reward model for the configured number of epochs
/// (zero under `no_pretrain`).
pub fn pretrain(
    cfg: &RunConfig,
    prefs: &PreferenceBuffer,
) -> Result<(RewardModel, Vec<PretrainRow>), RunError> {
    let mut rm = init_reward(cfg);
    let epochs = cfg.effective_pretrain_epochs();
    let mut rows = Vec::new();
    if prefs.is_empty() {
        if epochs > 0 {
            return Err(ConfigError::Invalid("pretraining needs preference pairs".into()).into());
        }
        return Ok((rm, rows));
    }
    rows.push(pretrain_row(&rm, prefs, 0, f64::NAN)?);
    let mut rng = stream_rng(cfg.seed, streams::PRETRAIN, 0);
    for epoch in 1..=epochs {
        let trace = rm.pretrain(prefs, 1, cfg.preference_batch_size, &mut rng)?;
        rows.push(pretrain_row(&rm, prefs, epoch, trace.epochs[0].mean_loss)?);
    }
    Ok((rm, rows))
}

/// Reward model a run of `cfg` starts from, given the shared pretrained one.
pub fn starting_reward(cfg: &RunConfig, pretrained: &RewardModel) -> RewardModel {
    if cfg.no_pretrain {
        init_reward(cfg)
    } else {
        pretrained.clone()
    }
}

pub fn build_trainer<'a>(
    cfg: &RunConfig,
    data: &'a RunData,
    reward: RewardModel,
) -> Result<Trainer<'a>, RunError> {
    cfg.validate()?;
    let agent = Agent::build(
        cfg.algo,
        cfg.state_dim,
        cfg.action_dim,
        &cfg.agent_config(),
        &cfg.baseline_config(),
        cfg.seed,
    )
    .map_err(TrainError::from)?;
    Ok(Trainer::new(
        agent,
        reward,
        &data.replay,
        &data.preferences,
        cfg.train_config(),
        cfg.seed,
    )?)
}

/// Result of one in-memory training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Metrics of the initial policy, when evaluation is on.
    pub start: Option<EvalPoint>,
    pub rows: Vec<MetricsRow>,
    pub actor: Actor,
    pub checkpoint: Checkpoint,
}

impl TrainOutcome {
    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Trains `cfg.algo` from `reward` without touching the file system.
pub fn train(
    cfg: &RunConfig,
    data: &RunData,
    reward: RewardModel,
    evaluate: bool,
) -> Result<TrainOutcome, RunError> {
    let mut trainer = build_trainer(cfg, data, reward)?;
    let ev = if evaluate {
        Some(data.evaluator(cfg)?)
    } else {
        None
    };
    let start = match &ev {
        Some(ev) => Some(ev.evaluate(&trainer.actor())?),
        None => None,
    };
    let rows = trainer.run(ev.as_ref(), |_, _| Ok(()))?;
    Ok(TrainOutcome {
        start,
        rows,
        actor: trainer.actor(),
        checkpoint: trainer.checkpoint(),
    })
}

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}

fn is_shared_key(key: &str) -> bool {
    key.starts_with("sim_")
        || matches!(
            key,
            "seed"
                | "task"
                | "state_dim"
                | "action_dim"
                | "users"
                | "heldout_fraction"
                | "sessions_per_user"
                | "min_requests"
                | "preference_pairs"
                | "segment_length"
                | "teacher_margin"
                | "preference_capacity"
                | "replay_capacity"
                | "reward_lr"
                | "hidden"
                | "hidden_layers"
                | "preference_batch_size"
                | "pretrain_epochs"
        )
}

fn write_run_files(dir: &Path, cfg: &RunConfig) -> Result<(), RunError> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), &cfg.snapshot())?;
    write_text(&dir.join("seed.txt"), &format!("{}\n", cfg.seed))?;
    write_text(&dir.join("build_id.txt"), &format!("{BUILD_ID}\n"))
}

/// Creates the run root, or checks that an existing one was made with the
/// same data and reward settings.
pub fn open_root(out: &Path, cfg: &RunConfig) -> Result<(), RunError> {
    cfg.validate()?;
    let snapshot = out.join("config.txt");
    if !snapshot.exists() {
        return write_run_files(out, cfg);
    }
    let prior = RunConfig::from_file(&snapshot, "reference")?;
    let (a, b) = (prior.entries(), cfg.entries());
    for ((key, old), (_, new)) in a.iter().zip(&b) {
        if is_shared_key(key) && old != new {
            return Err(ConfigError::Invalid(format!(
                "{} was created with {key} = {old}, not {new}",
                out.display()
            ))
            .into());
        }
    }
    Ok(())
}

pub fn write_data(dir: &Path, d: &Dataset) -> Result<(), RunError> {
    create_dir(dir)?;
    d.replay.save(dir.join("transitions.trn"))?;
    d.preferences.save(dir.join("preferences.prf"))?;
    write_heldout(dir.join("heldout.ses"), &d.world, &d.heldout)?;
    write_levels_csv(dir.join("levels.csv"), &d.level_histogram())?;
    Ok(())
}

pub fn read_data(dir: &Path, cfg: &RunConfig) -> Result<RunData, RunError> {
    let open = |name: &str| -> Result<BufReader<File>, RunError> {
        let path = dir.join(name);
        Ok(BufReader::new(File::open(&path).map_err(io_err(&path))?))
    };
    let replay = ReplayBuffer::read_from(open("transitions.trn")?, cfg.replay_capacity)?;
    let preferences = PreferenceBuffer::read_from(
        open("preferences.prf")?,
        cfg.preference_capacity.max(DEFAULT_PREFERENCE_CAPACITY),
    )?;
    let (world, heldout) = read_heldout(dir.join("heldout.ses"), cfg.sim_params())?;
    Ok(RunData {
        world,
        replay,
        preferences,
        heldout,
    })
}

/// `generate`: simulates the dataset and writes it under `<out>/data`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Dataset, RunError> {
    open_root(out, cfg)?;
    let d = generate(cfg)?;
    write_data(&data_dir(out), &d)?;
    Ok(d)
}

fn load_or_generate(cfg: &RunConfig, out: &Path) -> Result<RunData, RunError> {
    let dir = data_dir(out);
    if dir.join("transitions.trn").exists() {
        read_data(&dir, cfg)
    } else {
        Ok(cmd_generate(cfg, out)?.into())
    }
}

fn write_pretrain(out: &Path, rm: &RewardModel, rows: &[PretrainRow]) -> Result<(), RunError> {
    let mut ckpt = Checkpoint::new();
    rm.save_to(&mut ckpt, "reward");
    ckpt.save(out.join("reward.ckpt"))?;
    let mut csv = format!("{}\n", PretrainRow::CSV_HEADER);
    for r in rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out.join("pretrain.csv"), &csv)
}

/// `pretrain`: fits the reward model on `<out>/data`, generating the data
/// first when absent, and writes `reward.ckpt` and `pretrain.csv`.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<Vec<PretrainRow>, RunError> {
    open_root(out, cfg)?;
    let data = load_or_generate(cfg, out)?;
    let (rm, rows) = pretrain(cfg, &data.preferences)?;
    write_pretrain(out, &rm, &rows)?;
    Ok(rows)
}

fn load_or_pretrain(cfg: &RunConfig, out: &Path, data: &RunData) -> Result<RewardModel, RunError> {
    let path = out.join("reward.ckpt");
    if path.exists() {
        let mut rm = init_reward(cfg);
        rm.restore_from(&Checkpoint::load(&path)?, "reward")?;
        return Ok(rm);
    }
    let (rm, rows) = pretrain(cfg, &data.preferences)?;
    write_pretrain(out, &rm, &rows)?;
    Ok(rm)
}

fn algo_dir(out: &Path, algo: Algo) -> PathBuf {
    out.join(algo.name())
}

fn read_rows(path: &Path) -> Result<Vec<MetricsRow>, RunError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines().skip(1) {
        let line = line.map_err(io_err(path))?;
        let row = MetricsRow::parse(&line)
            .ok_or_else(|| RunError::Missing(format!("parsable row in {}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<(), RunError> {
    let mut csv = format!("{}\n", MetricsRow::CSV_HEADER);
    for r in rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(path, &csv)
}

/// Trains one algorithm in `run_dir` from `reward`, writing metrics and
/// checkpoints after every row. With `resume`, continues from
/// `checkpoints/latest.ckpt`.
pub fn train_in_dir(
    cfg: &RunConfig,
    data: &RunData,
    reward: RewardModel,
    run_dir: &Path,
    resume: bool,
) -> Result<Vec<MetricsRow>, RunError> {
    let mut trainer = build_trainer(cfg, data, reward)?;
    let ev = data.evaluator(cfg)?;
    let ckpt_dir = run_dir.join("checkpoints");
    let metrics = run_dir.join("metrics.csv");
    let latest = ckpt_dir.join("latest.ckpt");
    let mut rows = Vec::new();
    if resume {
        if !latest.exists() {
            return Err(RunError::Missing(latest.display().to_string()));
        }
        trainer.restore(&Checkpoint::load(&latest)?)?;
        rows = read_rows(&metrics)?;
        rows.retain(|r| r.step <= trainer.step);
        write_rows(&metrics, &rows)?;
    } else {
        write_run_files(run_dir, cfg)?;
        create_dir(&ckpt_dir)?;
        let p = ev.evaluate(&trainer.actor())?;
        write_text(
            &run_dir.join("start.csv"),
            &format!("step,ncis,cum_level\n0,{},{}\n", p.ncis, p.cum_level),
        )?;
        write_rows(&metrics, &[])?;
    }
    let iterations = cfg.iterations as u64;
    let new_rows = trainer.run(Some(&ev), |row, t| {
        let mut f = OpenOptions::new().append(true).open(&metrics)?;
        writeln!(f, "{}", row.csv_row())?;
        let ckpt = t.checkpoint();
        ckpt.save(&latest)?;
        if row.step % iterations == 0 {
            ckpt.save(ckpt_dir.join(format!("step-{:08}.ckpt", row.step)))?;
        }
        Ok(())
    })?;
    trainer.checkpoint().save(run_dir.join("final.ckpt"))?;
    rows.extend(new_rows);
    Ok(rows)
}

/// `train`: trains `cfg.algo` under `<out>/<algo>`, generating the data and
/// pretraining the reward model first when they are absent.
pub fn cmd_train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Vec<MetricsRow>, RunError> {
    open_root(out, cfg)?;
    let data = load_or_generate(cfg, out)?;
    let pretrained = load_or_pretrain(cfg, out, &data)?;
    let reward = starting_reward(cfg, &pretrained);
    train_in_dir(cfg, &data, reward, &algo_dir(out, cfg.algo), resume)
}

/// Score of one checkpoint plus the learning curve of a run's snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
}

/// NCIS report of `actor` on the evaluation users.
pub fn eval_report(cfg: &RunConfig, data: &RunData, actor: &Actor) -> Result<EvalReport, RunError> {
    let users = data.eval_users(cfg)?;
    let out = ncis_score(actor, users, cfg.task, &cfg.propensity())?;
    Ok(EvalReport {
        algo: cfg.algo.name().to_string(),
        task: cfg.task,
        score: out.score,
        ci95: confidence_interval(&out.per_user).unwrap_or(f64::NAN),
        n_users: out.per_user.len(),
        seed: cfg.seed,
    })
}

fn snapshots(dir: &Path) -> Result<Vec<(u64, Actor)>, RunError> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let step = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<u64>().ok());
        if let Some(step) = step {
            found.push((step, path));
        }
    }
    found.sort();
    found
        .into_iter()
        .map(|(step, path)| Ok((step, load_actor(&Checkpoint::load(&path)?)?)))
        .collect()
}

/// `eval`: scores `checkpoint` (default `<out>/<algo>/final.ckpt`) and the
/// run's epoch snapshots, writing `eval.csv` and `curve.csv`.
pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<EvalSummary, RunError> {
    cfg.validate()?;
    let run_dir = algo_dir(out, cfg.algo);
    let path = checkpoint.map_or_else(|| run_dir.join("final.ckpt"), Path::to_path_buf);
    if !path.exists() {
        return Err(RunError::Missing(format!("checkpoint {}", path.display())));
    }
    let actor = load_actor(&Checkpoint::load(&path)?)?;
    let data = read_data(&data_dir(out), cfg)?;
    let report = eval_report(cfg, &data, &actor)?;
    let seeds: Vec<u64> = (0..CURVE_SEEDS).map(|k| cfg.seed + k).collect();
    let curve = learning_curve(
        &snapshots(&run_dir.join("checkpoints"))?,
        &data.world,
        data.eval_users(cfg)?,
        cfg.task,
        cfg.eval_sessions,
        &seeds,
    )?;
    create_dir(&run_dir)?;
    write_text(
        &run_dir.join("eval.csv"),
        &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    let mut csv = String::from("step,mean,stderr\n");
    for p in &curve {
        csv.push_str(&format!("{},{},{}\n", p.step, p.mean, p.stderr));
    }
    write_text(&run_dir.join("curve.csv"), &csv)?;
    Ok(EvalSummary { report, curve })
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub name: String,
    pub config: RunConfig,
}

/// Expectile sweep over [`TAU_GRID`], then pretraining and fine-tuning
/// switched on and off. Every cell trains PrefRec.
pub fn ablation_grid(cfg: &RunConfig) -> Vec<AblationCell> {
    let base = RunConfig {
        algo: Algo::PrefRec,
        tau: Some(cfg.effective_expectile()),
        no_pretrain: false,
        no_finetune: false,
        ..cfg.clone()
    };
    let mut cells: Vec<AblationCell> = TAU_GRID
        .iter()
        .map(|&t| AblationCell {
            name: format!("tau-{t}"),
            config: RunConfig {
                tau: Some(t),
                ..base.clone()
            },
        })
        .collect();
    for pretrain in [true, false] {
        for finetune in [true, false] {
            let on = |b: bool| if b { "on" } else { "off" };
            cells.push(AblationCell {
                name: format!("pretrain-{}-finetune-{}", on(pretrain), on(finetune)),
                config: RunConfig {
                    no_pretrain: !pretrain,
                    no_finetune: !finetune,
                    ..base.clone()
                },
            });
        }
    }
    cells
}

/// Final metrics of one ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub name: String,
    pub tau: f64,
    pub pretrain: bool,
    pub finetune: bool,
    pub final_row: MetricsRow,
}

/// `ablate`: trains every grid cell under `<out>/ablate/<cell>` and writes
/// `summary.csv`. Cells with identical settings train once.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<AblationResult>, RunError> {
    open_root(out, cfg)?;
    let data = load_or_generate(cfg, out)?;
    let pretrained = load_or_pretrain(cfg, out, &data)?;
    let root = out.join("ablate");
    let mut done: HashMap<String, MetricsRow> = HashMap::new();
    let mut results = Vec::new();
    for cell in ablation_grid(cfg) {
        let c = &cell.config;
        let dir = root.join(&cell.name);
        let key = c.snapshot();
        let final_row = match done.get(&key) {
            Some(row) => {
                write_run_files(&dir, c)?;
                row.clone()
            }
            None => {
                let rows = train_in_dir(c, &data, starting_reward(c, &pretrained), &dir, false)?;
                let last = rows
                    .last()
                    .cloned()
                    .ok_or_else(|| RunError::Missing(format!("metrics rows for {}", cell.name)))?;
                done.insert(key, last.clone());
                last
            }
        };
        results.push(AblationResult {
            name: cell.name,
            tau: c.effective_expectile(),
            pretrain: !c.no_pretrain,
            finetune: !c.no_finetune,
            final_row,
        });
    }
    let mut csv = String::from("cell,tau,pretrain,finetune,ncis,cum_level\n");
    for r in &results {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.tau, r.pretrain, r.finetune, r.final_row.ncis, r.final_row.cum_level
        ));
    }
    write_text(&root.join("summary.csv"), &csv)?;
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let grid = ablation_grid(&RunConfig::preset("desk").unwrap());
        assert_eq!(grid.len(), 8);
        let taus: Vec<f64> = grid[..4].iter().map(|c| c.config.effective_expectile()).collect();
        assert_eq!(taus, TAU_GRID);
        let switches: Vec<(bool, bool)> = grid[4..]
            .iter()
            .map(|c| (c.config.no_pretrain, c.config.no_finetune))
            .collect();
        assert_eq!(
            switches,
            [(false, false), (false, true), (true, false), (true, true)]
        );
        assert!(grid.iter().all(|c| c.config.algo == Algo::PrefRec));
    }

    #[test]
    fn exit_codes() {
        let cfg = RunError::Config(ConfigError::UnknownKey("x".into()));
        assert_eq!(cfg.exit_code(), 2);
        let num = RunError::Reward(RewardError::NonFinite("loss"));
        assert_eq!(num.exit_code(), 3);
        assert_eq!(RunError::Missing("x".into()).exit_code(), 1);
    }
}
