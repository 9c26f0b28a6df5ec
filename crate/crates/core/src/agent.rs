//! The PrefRec actor-critic: expectile value regression, Q regression onto
//! `r + gamma V(s')`, and a deterministic policy ascending Q.

use rand::Rng;
use thiserror::Error;

use crate::nn::{Checkpoint, CheckpointError, Gradients, Matrix, Mlp, NnError};
use crate::policy::{
    init_critic, init_value, policy_loss, q_values, regression_loss, values, Policy, Trainable,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    Invalid(String),
}

/// `H^tau(u) = |tau - 1(u < 0)| u^2`
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

#[inline]
fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// Transitions with model-predicted rewards. Built right before an update.
#[derive(Debug, Clone)]
pub struct LabeledBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
}

impl LabeledBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdMode {
    /// Target `r + gamma V(s')`.
    PrefRec,
    /// Target `r + gamma Q_target(s', pi(s'))`.
    NaiveTd,
}

/// How `target_retention` is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftUpdate {
    /// `target <- (1 - rho) online + rho target`
    Retention,
    /// `target <- rho online + (1 - rho) target`
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub discount: f64,
    pub expectile: f64,
    pub target_retention: f64,
    pub soft_update: SoftUpdate,
    pub mode: TdMode,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            expectile: 0.7,
            target_retention: 0.999,
            soft_update: SoftUpdate::Retention,
            mode: TdMode::PrefRec,
            actor_lr: 5e-6,
            critic_lr: 5e-5,
            hidden: 256,
            hidden_layers: 2,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(AgentError::Invalid(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        if !(0.5..1.0).contains(&self.expectile) {
            return Err(AgentError::Invalid(format!(
                "expectile must lie in [0.5, 1), got {}",
                self.expectile
            )));
        }
        if !(0.0..=1.0).contains(&self.target_retention) {
            return Err(AgentError::Invalid(format!(
                "target retention must lie in [0, 1], got {}",
                self.target_retention
            )));
        }
        Ok(())
    }
}

/// Polyak update of `target` toward `online`.
pub fn soft_update(
    target: &mut Mlp,
    online: &Mlp,
    rho: f64,
    rule: SoftUpdate,
) -> Result<(), NnError> {
    let retention = match rule {
        SoftUpdate::Retention => rho,
        SoftUpdate::Literal => 1.0 - rho,
    };
    target.blend_from(online, retention)
}

/// Losses from one [`PrefRecAgent::update`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepLosses {
    pub critic: f64,
    pub value: f64,
    pub actor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefRecAgent {
    pub q: Trainable,
    pub q_target: Mlp,
    pub v: Trainable,
    pub policy: Policy,
    pub policy_adam: crate::nn::Adam,
    pub config: AgentConfig,
}

impl PrefRecAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let (h, l) = (config.hidden, config.hidden_layers);
        let q = init_critic(state_dim, action_dim, h, l, rng);
        let v = init_value(state_dim, h, l, rng);
        let policy = Policy::new(state_dim, action_dim, h, l, rng);
        Ok(Self::from_parts(q, v, policy, config))
    }

    /// Assembles an agent; the target critic starts as a copy of `q`.
    pub fn from_parts(q: Mlp, v: Mlp, policy: Policy, config: AgentConfig) -> Self {
        Self {
            q_target: q.clone(),
            q: Trainable::new(q),
            v: Trainable::new(v),
            policy_adam: crate::nn::Adam::new(policy.net()),
            policy,
            config,
        }
    }

    /// Expectile loss of `V(s)` against `Q_target(s, a)` and its gradient.
    pub fn value_loss(&self, states: &Matrix, actions: &Matrix) -> Result<(f64, Gradients), AgentError> {
        let targets = q_values(&self.q_target, states, actions)?;
        expectile_regression(&self.v.net, states, &targets, self.config.expectile)
    }

    pub fn v_update(&mut self, states: &Matrix, actions: &Matrix) -> Result<f64, AgentError> {
        let (loss, g) = self.value_loss(states, actions)?;
        self.v.step(&g, self.config.critic_lr)?;
        Ok(loss)
    }

    /// Bootstrapped regression targets under the configured mode.
    pub fn q_targets(&self, batch: &LabeledBatch) -> Result<Vec<f64>, AgentError> {
        let next = match self.config.mode {
            TdMode::PrefRec => values(&self.v.net, &batch.next_states)?,
            TdMode::NaiveTd => {
                let a = self.policy.act_batch(&batch.next_states)?;
                q_values(&self.q_target, &batch.next_states, &a)?
            }
        };
        let g = self.config.discount;
        let t: Vec<f64> = batch
            .rewards
            .iter()
            .zip(&next)
            .map(|(r, v)| r + g * v)
            .collect();
        if !t.iter().all(|v| v.is_finite()) {
            return Err(AgentError::NonFinite("Q target"));
        }
        Ok(t)
    }

    pub fn q_loss(&self, batch: &LabeledBatch) -> Result<(f64, Gradients), AgentError> {
        let targets = self.q_targets(batch)?;
        let inputs = Matrix::hcat(&batch.states, &batch.actions);
        Ok(regression_loss(&self.q.net, &inputs, &targets)?)
    }

    pub fn q_update(&mut self, batch: &LabeledBatch) -> Result<f64, AgentError> {
        let (loss, g) = self.q_loss(batch)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite("critic loss"));
        }
        self.q.step(&g, self.config.critic_lr)?;
        Ok(loss)
    }

    pub fn policy_update(&mut self, states: &Matrix) -> Result<f64, AgentError> {
        let (loss, g) = policy_loss(&self.policy, &self.q.net, states)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite("actor loss"));
        }
        self.policy_adam
            .step(self.policy.net_mut(), &g, self.config.actor_lr)?;
        Ok(loss)
    }

    pub fn soft_update_target(&mut self) -> Result<(), AgentError> {
        soft_update(
            &mut self.q_target,
            &self.q.net,
            self.config.target_retention,
            self.config.soft_update,
        )?;
        Ok(())
    }

    /// V step, Q step, policy step, target update.
    pub fn update(&mut self, batch: &LabeledBatch) -> Result<StepLosses, AgentError> {
        let value = match self.config.mode {
            TdMode::PrefRec => self.v_update(&batch.states, &batch.actions)?,
            TdMode::NaiveTd => 0.0,
        };
        let critic = self.q_update(batch)?;
        let actor = self.policy_update(&batch.states)?;
        self.soft_update_target()?;
        if !(critic.is_finite() && value.is_finite() && actor.is_finite()) {
            return Err(AgentError::NonFinite("loss"));
        }
        Ok(StepLosses {
            critic,
            value,
            actor,
        })
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint) {
        self.q.save_to(ckpt, "q");
        ckpt.push_mlp("q_target", &self.q_target);
        self.v.save_to(ckpt, "v");
        ckpt.push_mlp("policy", self.policy.net());
        ckpt.push_adam("policy", self.policy.net(), &self.policy_adam);
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<(), AgentError> {
        self.q.restore_from(ckpt, "q")?;
        ckpt.restore_mlp("q_target", &mut self.q_target)?;
        self.v.restore_from(ckpt, "v")?;
        ckpt.restore_mlp("policy", self.policy.net_mut())?;
        ckpt.restore_adam("policy", self.policy.net(), &mut self.policy_adam)?;
        Ok(())
    }
}

/// `mean_i H^tau(y_i - f(x_i))` and its gradient with respect to `f`.
pub fn expectile_regression(
    net: &Mlp,
    inputs: &Matrix,
    targets: &[f64],
    tau: f64,
) -> Result<(f64, Gradients), AgentError> {
    let tape = net.forward_tape(inputs)?;
    let pred = tape.output().as_slice();
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(targets.len());
    for (v, y) in pred.iter().zip(targets) {
        let u = y - v;
        let w = expectile_weight(u, tau);
        loss += w * u * u;
        up.push(-2.0 * w * u / n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(AgentError::NonFinite("value loss"));
    }
    let (g, _) = net.backward_tape(&tape, &Matrix::from_vec(targets.len(), 1, up))?;
    Ok((loss, g))
}
