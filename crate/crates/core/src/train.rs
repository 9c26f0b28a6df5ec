//! The offline training loop shared by every algorithm: sample, label,
//! update, optional reward fine-tuning, interval metrics and checkpoints.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, LabeledBatch, PrefRecAgent, StepLosses};
use crate::baselines::{
    ddpg_update, init_networks, ActorCritic, ActorObjective, BaselineConfig, IlAgent, IqlAgent,
};
use crate::buffers::{BufferError, PreferenceBuffer, ReplayBuffer, TransitionBatch};
use crate::eval::{EvalError, Evaluator};
use crate::nn::{Checkpoint, CheckpointError, NnError};
use crate::policy::{Actor, Normalizer, Policy};
use crate::reward::{RewardError, RewardModel};
use crate::rng::{stream_rng, streams, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("epoch {epoch}, iteration {iteration}: {source}")]
    Step {
        epoch: usize,
        iteration: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training setup: {0}")]
    Invalid(String),
}

impl TrainError {
    /// True when the failure is a diverged loss or target.
    pub fn is_numerical(&self) -> bool {
        match self {
            TrainError::Agent(AgentError::NonFinite(_))
            | TrainError::Agent(AgentError::Nn(NnError::NonFiniteGradient { .. })) => true,
            TrainError::Reward(e) => e.is_numerical(),
            TrainError::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algo {
    PrefRec,
    Ddpg,
    Td3,
    Td3Bc,
    Il,
    Iql,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::PrefRec,
        Algo::Ddpg,
        Algo::Td3,
        Algo::Td3Bc,
        Algo::Il,
        Algo::Iql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::PrefRec => "prefrec",
            Algo::Ddpg => "ddpg",
            Algo::Td3 => "td3",
            Algo::Td3Bc => "td3_bc",
            Algo::Il => "il",
            Algo::Iql => "iql",
        }
    }

    pub fn uses_reward(self) -> bool {
        self != Algo::Il
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Error)]
#[error("unknown algorithm `{0}` (expected prefrec, ddpg, td3, td3_bc, il or iql)")]
pub struct UnknownAlgo(pub String);

impl FromStr for Algo {
    type Err = UnknownAlgo;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| UnknownAlgo(s.to_string()))
    }
}

/// Any of the trainable agents.
#[derive(Debug, Clone, PartialEq)]
pub enum Agent {
    PrefRec(PrefRecAgent),
    Ddpg(ActorCritic),
    Td3(ActorCritic),
    Td3Bc(ActorCritic),
    Il(IlAgent),
    Iql(IqlAgent),
}

impl Agent {
    /// Fresh agent; networks come from the seed's fixed init sub-streams so
    /// that different algorithms start from the same actor.
    pub fn build(
        algo: Algo,
        state_dim: usize,
        action_dim: usize,
        prefrec: &AgentConfig,
        baseline: &BaselineConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        prefrec.validate()?;
        let (policy, q1, q2, v) =
            init_networks(seed, state_dim, action_dim, prefrec.hidden, prefrec.hidden_layers);
        let b = baseline.clone();
        Ok(match algo {
            Algo::PrefRec => Agent::PrefRec(PrefRecAgent::from_parts(q1, v, policy, prefrec.clone())),
            Algo::Ddpg => Agent::Ddpg(ActorCritic::new(policy, vec![q1], b, ActorObjective::MaxQ)),
            Algo::Td3 | Algo::Td3Bc => {
                let critics = if b.twin_critics { vec![q1, q2] } else { vec![q1] };
                if algo == Algo::Td3 {
                    Agent::Td3(ActorCritic::new(policy, critics, b, ActorObjective::MaxQ))
                } else {
                    if !(b.td3bc_alpha >= 0.0) {
                        return Err(TrainError::Invalid("td3bc_alpha must be non-negative".into()));
                    }
                    Agent::Td3Bc(ActorCritic::new(policy, critics, b, ActorObjective::QPlusBc))
                }
            }
            Algo::Il => Agent::Il(IlAgent::new(policy, b.actor_lr)),
            Algo::Iql => Agent::Iql(IqlAgent::new(q1, v, policy, b)),
        })
    }

    pub fn algo(&self) -> Algo {
        match self {
            Agent::PrefRec(_) => Algo::PrefRec,
            Agent::Ddpg(_) => Algo::Ddpg,
            Agent::Td3(_) => Algo::Td3,
            Agent::Td3Bc(_) => Algo::Td3Bc,
            Agent::Il(_) => Algo::Il,
            Agent::Iql(_) => Algo::Iql,
        }
    }

    pub fn policy(&self) -> &Policy {
        match self {
            Agent::PrefRec(a) => &a.policy,
            Agent::Ddpg(a) | Agent::Td3(a) | Agent::Td3Bc(a) => &a.policy,
            Agent::Il(a) => &a.policy,
            Agent::Iql(a) => &a.policy,
        }
    }

    pub fn update(&mut self, batch: &LabeledBatch, rng: &mut Rng) -> Result<StepLosses, AgentError> {
        match self {
            Agent::PrefRec(a) => a.update(batch),
            Agent::Ddpg(a) => ddpg_update(a, batch),
            Agent::Td3(a) | Agent::Td3Bc(a) => a.update(batch, rng),
            Agent::Il(a) => a.update(&batch.states, &batch.actions),
            Agent::Iql(a) => a.update(batch),
        }
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint) {
        match self {
            Agent::PrefRec(a) => a.save_to(ckpt),
            Agent::Ddpg(a) | Agent::Td3(a) | Agent::Td3Bc(a) => a.save_to(ckpt),
            Agent::Il(a) => a.save_to(ckpt),
            Agent::Iql(a) => a.save_to(ckpt),
        }
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<(), AgentError> {
        match self {
            Agent::PrefRec(a) => a.restore_from(ckpt),
            Agent::Ddpg(a) | Agent::Td3(a) | Agent::Td3Bc(a) => a.restore_from(ckpt),
            Agent::Il(a) => a.restore_from(ckpt),
            Agent::Iql(a) => a.restore_from(ckpt),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Updates per epoch.
    pub iterations: usize,
    pub batch_size: usize,
    pub preference_batch_size: usize,
    /// A metrics row every this many updates and at every epoch end.
    pub eval_interval: usize,
    pub fine_tune: bool,
    /// Updates between reward fine-tuning minibatches; 0 means one per epoch.
    pub finetune_interval: usize,
    pub normalize_observations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            iterations: 1000,
            batch_size: 4096,
            preference_batch_size: 256,
            eval_interval: 200,
            fine_tune: true,
            finetune_interval: 0,
            normalize_observations: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("preference_batch_size", self.preference_batch_size),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                return Err(TrainError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn intervals_per_epoch(&self) -> usize {
        self.iterations.div_ceil(self.eval_interval.max(1))
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.iterations) as u64
    }

    fn is_boundary(&self, step: u64) -> bool {
        let it = self.iterations as u64;
        let within = step % it;
        within == 0 || within % self.eval_interval as u64 == 0
    }
}

/// One interval's mean losses and, when an evaluator is attached, the
/// snapshot's scores. Absent values are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub epoch: usize,
    pub critic_loss: f64,
    pub value_loss: f64,
    pub actor_loss: f64,
    pub reward_loss: f64,
    pub ncis: f64,
    pub cum_level: f64,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "step,epoch,critic_loss,value_loss,actor_loss,reward_loss,ncis,cum_level";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.critic_loss,
            self.value_loss,
            self.actor_loss,
            self.reward_loss,
            self.ncis,
            self.cum_level
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let x = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            step: f[0].parse().ok()?,
            epoch: f[1].parse().ok()?,
            critic_loss: x(2)?,
            value_loss: x(3)?,
            actor_loss: x(4)?,
            reward_loss: x(5)?,
            ncis: x(6)?,
            cum_level: x(7)?,
        })
    }

    /// Bitwise comparison, so NaN fields compare equal to themselves.
    pub fn bits_eq(&self, other: &Self) -> bool {
        let f = |r: &Self| {
            [
                r.critic_loss,
                r.value_loss,
                r.actor_loss,
                r.reward_loss,
                r.ncis,
                r.cum_level,
            ]
            .map(f64::to_bits)
        };
        self.step == other.step && self.epoch == other.epoch && f(self) == f(other)
    }
}

#[derive(Debug, Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: f64) {
        if !v.is_nan() {
            self.sum += v;
            self.n += 1;
        }
    }

    fn take(&mut self) -> f64 {
        let out = if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        };
        *self = Mean::default();
        out
    }
}

#[derive(Debug, Default)]
struct Accumulator {
    critic: Mean,
    value: Mean,
    actor: Mean,
    reward: Mean,
}

/// Drives one agent through its training schedule.
pub struct Trainer<'a> {
    pub agent: Agent,
    pub reward: RewardModel,
    pub normalizer: Option<Normalizer>,
    pub config: TrainConfig,
    pub seed: u64,
    /// Updates completed so far.
    pub step: u64,
    replay: &'a ReplayBuffer,
    prefs: &'a PreferenceBuffer,
    acc: Accumulator,
}

impl<'a> Trainer<'a> {
    pub fn new(
        agent: Agent,
        reward: RewardModel,
        replay: &'a ReplayBuffer,
        prefs: &'a PreferenceBuffer,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if replay.is_empty() && config.total_steps() > 0 {
            return Err(TrainError::Invalid("replay buffer is empty".into()));
        }
        if agent.policy().state_dim() != replay.state_dim()
            || agent.policy().action_dim() != replay.action_dim()
        {
            return Err(TrainError::Invalid(format!(
                "agent expects d_s={} d_a={}, replay has d_s={} d_a={}",
                agent.policy().state_dim(),
                agent.policy().action_dim(),
                replay.state_dim(),
                replay.action_dim()
            )));
        }
        let normalizer = config.normalize_observations.then(|| {
            Normalizer::fit(replay.state_dim(), replay.iter().map(|t| t.state))
        });
        Ok(Self {
            agent,
            reward,
            normalizer,
            config,
            seed,
            step: 0,
            replay,
            prefs,
            acc: Accumulator::default(),
        })
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    /// The current policy as it acts on raw simulator states.
    pub fn actor(&self) -> Actor {
        Actor::new(self.agent.policy().clone(), self.normalizer.clone())
    }

    fn fine_tunes(&self) -> bool {
        self.config.fine_tune && self.agent.algo() == Algo::PrefRec && !self.prefs.is_empty()
    }

    /// Reward labels on raw states, then observation normalization.
    pub fn label(&self, batch: TransitionBatch) -> Result<LabeledBatch, TrainError> {
        let rewards = if self.agent.algo().uses_reward() {
            self.reward.predict_batch(&batch.states, &batch.actions)?
        } else {
            vec![0.0; batch.len()]
        };
        if !rewards.iter().all(|r| r.is_finite()) {
            return Err(RewardError::NonFinite("reward label").into());
        }
        let (states, next_states) = match &self.normalizer {
            Some(n) => (n.apply(&batch.states), n.apply(&batch.next_states)),
            None => (batch.states, batch.next_states),
        };
        Ok(LabeledBatch {
            states,
            actions: batch.actions,
            rewards,
            next_states,
        })
    }

    fn one_step(&mut self) -> Result<(), TrainError> {
        let mut rng = stream_rng(self.seed, streams::BATCH, self.step);
        let batch = self.replay.sample_batch(self.config.batch_size, &mut rng)?;
        let labeled = self.label(batch)?;
        let mut noise = stream_rng(self.seed, streams::NOISE, self.step);
        let losses = self.agent.update(&labeled, &mut noise)?;
        self.acc.critic.push(losses.critic);
        self.acc.value.push(losses.value);
        self.acc.actor.push(losses.actor);

        let it = self.config.iterations as u64;
        let done = self.step + 1;
        let tune_now = match self.config.finetune_interval {
            0 => done % it == 0,
            k => done % k as u64 == 0,
        };
        if tune_now && self.fine_tunes() {
            let mut prng = stream_rng(self.seed, streams::PREFERENCE, self.step);
            let records = self
                .prefs
                .sample_batch(self.config.preference_batch_size, &mut prng)?;
            let loss = self.reward.train_step(&records)?;
            self.acc.reward.push(loss);
        }
        self.step = done;
        Ok(())
    }

    /// Trains to the end of the schedule. Calls `on_row` after each metrics
    /// row, the natural place to write CSV lines and checkpoints.
    pub fn run<F>(&mut self, evaluator: Option<&Evaluator<'_>>, on_row: F) -> Result<Vec<MetricsRow>, TrainError>
    where
        F: FnMut(&MetricsRow, &Trainer<'a>) -> Result<(), TrainError>,
    {
        self.run_until(self.config.total_steps(), evaluator, on_row)
    }

    /// Trains until the first row boundary at or after `limit` updates.
    pub fn run_until<F>(
        &mut self,
        limit: u64,
        evaluator: Option<&Evaluator<'_>>,
        mut on_row: F,
    ) -> Result<Vec<MetricsRow>, TrainError>
    where
        F: FnMut(&MetricsRow, &Trainer<'a>) -> Result<(), TrainError>,
    {
        let limit = limit.min(self.config.total_steps());
        let mut rows = Vec::new();
        let it = self.config.iterations.max(1) as u64;
        while self.step < self.config.total_steps() {
            let epoch = (self.step / it) as usize;
            let iteration = (self.step % it) as usize;
            self.one_step().map_err(|e| TrainError::Step {
                epoch: epoch + 1,
                iteration,
                source: Box::new(e),
            })?;
            if self.config.is_boundary(self.step) {
                let (ncis, cum_level) = match evaluator {
                    Some(ev) => {
                        let p = ev.evaluate(&self.actor())?;
                        (p.ncis, p.cum_level)
                    }
                    None => (f64::NAN, f64::NAN),
                };
                let row = MetricsRow {
                    step: self.step,
                    epoch: epoch + 1,
                    critic_loss: self.acc.critic.take(),
                    value_loss: self.acc.value.take(),
                    actor_loss: self.acc.actor.take(),
                    reward_loss: self.acc.reward.take(),
                    ncis,
                    cum_level,
                };
                on_row(&row, self)?;
                rows.push(row);
                if self.step >= limit {
                    break;
                }
            }
        }
        Ok(rows)
    }

    /// Agent, reward model, normalizer and step counter. Taken at a row
    /// boundary this is enough to resume bit for bit.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        self.agent.save_to(&mut ckpt);
        self.reward.save_to(&mut ckpt, "reward");
        if let Some(n) = &self.normalizer {
            n.save_to(&mut ckpt, "obs");
        }
        ckpt.push_scalar("trainer.step", self.step as f64);
        ckpt
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<(), TrainError> {
        self.agent.restore_from(ckpt)?;
        self.reward.restore_from(ckpt, "reward")?;
        self.normalizer = match ckpt.get("obs.mean") {
            Ok(_) => Some(Normalizer::load(ckpt, "obs")?),
            Err(_) => None,
        };
        let step = ckpt.scalar("trainer.step")? as u64;
        if step > self.config.total_steps() || (step > 0 && !self.config.is_boundary(step)) {
            return Err(TrainError::Invalid(format!(
                "checkpoint step {step} is not a row boundary of this schedule"
            )));
        }
        self.step = step;
        self.acc = Accumulator::default();
        Ok(())
    }
}

/// Restores the deployable actor (policy plus normalizer) from a training
/// checkpoint.
pub fn load_actor(ckpt: &Checkpoint) -> Result<Actor, TrainError> {
    let policy = Policy::from_net(ckpt.mlp("policy")?);
    let normalizer = match ckpt.get("obs.mean") {
        Ok(_) => Some(Normalizer::load(ckpt, "obs")?),
        Err(_) => None,
    };
    Ok(Actor::new(policy, normalizer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn algo_names_round_trip() {
        for a in Algo::ALL {
            assert_eq!(a.name().parse::<Algo>().unwrap(), a);
        }
        assert!("sac".parse::<Algo>().is_err());
    }

    #[test]
    fn boundaries() {
        let c = TrainConfig {
            iterations: 10,
            eval_interval: 4,
            ..TrainConfig::default()
        };
        let b: Vec<u64> = (1..=20).filter(|&s| c.is_boundary(s)).collect();
        assert_eq!(b, vec![4, 8, 10, 14, 18, 20]);
        assert_eq!(c.intervals_per_epoch(), 3);
    }

    #[test]
    fn row_csv_round_trip() {
        let r = MetricsRow {
            step: 7,
            epoch: 1,
            critic_loss: 0.1 + 0.2,
            value_loss: f64::NAN,
            actor_loss: -3.5e-7,
            reward_loss: 0.693,
            ncis: 1.0 / 3.0,
            cum_level: 42.0,
        };
        assert!(MetricsRow::parse(&r.csv_row()).unwrap().bits_eq(&r));
    }
}
