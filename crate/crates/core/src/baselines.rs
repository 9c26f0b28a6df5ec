//! Comparison agents on the same networks and batches: DDPG, TD3, TD3_BC,
//! behavior cloning (IL) and IQL.

use rand_distr::{Distribution, Normal};

use crate::agent::{
    expectile_regression, soft_update, AgentError, LabeledBatch, SoftUpdate, StepLosses,
};
use crate::nn::{Adam, Checkpoint, Gradients, Matrix, Mlp, NnError};
use crate::policy::{
    init_critic, init_value, policy_loss, q_values, regression_loss, values, Policy, Trainable,
};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub discount: f64,
    pub target_retention: f64,
    pub soft_update: SoftUpdate,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub hidden_layers: usize,
    /// Actor and target updates happen every `policy_delay` critic steps.
    pub policy_delay: u64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
    pub twin_critics: bool,
    pub td3bc_alpha: f64,
    pub iql_beta: f64,
    pub iql_weight_clip: f64,
    pub expectile: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            target_retention: 0.999,
            soft_update: SoftUpdate::Retention,
            actor_lr: 5e-6,
            critic_lr: 5e-5,
            hidden: 256,
            hidden_layers: 2,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            twin_critics: true,
            td3bc_alpha: 2.5,
            iql_beta: 3.0,
            iql_weight_clip: 100.0,
            expectile: 0.7,
        }
    }
}

impl BaselineConfig {
    /// Settings under which TD3 performs exactly the DDPG updates.
    pub fn ddpg_equivalent(mut self) -> Self {
        self.policy_delay = 1;
        self.target_noise = 0.0;
        self.twin_critics = false;
        self
    }
}

/// Mean over the batch of `w_i |pi(s_i) - a_i|^2` and its policy gradient;
/// unit weights when `weights` is `None`.
pub fn weighted_bc_loss(
    policy: &Policy,
    states: &Matrix,
    actions: &Matrix,
    weights: Option<&[f64]>,
) -> Result<(f64, Gradients), NnError> {
    let (tape, pred) = policy.forward_tape(states)?;
    let (up, loss) = bc_upstream(&pred, actions, weights);
    Ok((loss, policy.backward(&tape, &pred, &up)?))
}

fn bc_upstream(pred: &Matrix, actions: &Matrix, weights: Option<&[f64]>) -> (Matrix, f64) {
    let n = pred.rows() as f64;
    let mut up = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for i in 0..pred.rows() {
        let w = weights.map_or(1.0, |w| w[i]);
        for ((u, p), a) in up.row_mut(i).iter_mut().zip(pred.row(i)).zip(actions.row(i)) {
            let d = p - a;
            loss += w * d * d;
            *u = 2.0 * w * d / n;
        }
    }
    (up, loss / n)
}

/// TD3_BC actor objective `-lambda mean Q(s, pi(s)) + mean |pi(s) - a|^2`
/// with `lambda = alpha / mean |Q|`. The Q term is dropped when `alpha = 0`.
pub fn td3bc_actor_loss(
    policy: &Policy,
    q: &Mlp,
    states: &Matrix,
    actions: &Matrix,
    alpha: f64,
) -> Result<(f64, Gradients), NnError> {
    if alpha == 0.0 {
        return weighted_bc_loss(policy, states, actions, None);
    }
    let (ptape, pred) = policy.forward_tape(states)?;
    let n = states.rows();
    let qtape = q.forward_tape(&Matrix::hcat(states, &pred))?;
    let qv = qtape.output().as_slice();
    let mean_abs = qv.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let lambda = alpha / mean_abs.max(1e-8);
    let q_term = -lambda * qv.iter().sum::<f64>() / n as f64;
    let up_q = Matrix::from_vec(n, 1, vec![-lambda / n as f64; n]);
    let (_, dx) = q.backward_tape(&qtape, &up_q)?;
    let dq = dx.columns(states.cols(), dx.cols());
    let (mut up, bc) = bc_upstream(&pred, actions, None);
    for (u, d) in up.as_mut_slice().iter_mut().zip(dq.as_slice()) {
        *u += d;
    }
    Ok((q_term + bc, policy.backward(&ptape, &pred, &up)?))
}

/// Which actor objective an [`ActorCritic`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorObjective {
    /// `-mean Q(s, pi(s))`
    MaxQ,
    /// TD3_BC's normalized Q term plus behavior cloning.
    QPlusBc,
}

/// DDPG, TD3 and TD3_BC: deterministic actor with target actor and one or
/// two critics with targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub policy: Policy,
    pub policy_adam: Adam,
    pub policy_target: Policy,
    pub critics: Vec<Trainable>,
    pub critic_targets: Vec<Mlp>,
    pub config: BaselineConfig,
    pub objective: ActorObjective,
    pub updates: u64,
}

impl ActorCritic {
    pub fn new(policy: Policy, critics: Vec<Mlp>, config: BaselineConfig, objective: ActorObjective) -> Self {
        Self {
            policy_adam: Adam::new(policy.net()),
            policy_target: policy.clone(),
            policy,
            critic_targets: critics.clone(),
            critics: critics.into_iter().map(Trainable::new).collect(),
            config,
            objective,
            updates: 0,
        }
    }

    /// Smoothed target action `clip(pi_target(s') + clip(noise, -c, c), -1, 1)`.
    fn target_actions(&self, next_states: &Matrix, rng: &mut Rng) -> Result<Matrix, NnError> {
        let mut a = self.policy_target.act_batch(next_states)?;
        let sd = self.config.target_noise;
        if sd > 0.0 {
            let c = self.config.target_noise_clip;
            let normal = Normal::new(0.0, sd).expect("positive std");
            for v in a.as_mut_slice() {
                let eps: f64 = normal.sample(rng);
                *v = (*v + eps.clamp(-c, c)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// `r + gamma min_k Q_target_k(s', a')`
    pub fn critic_targets(&self, batch: &LabeledBatch, rng: &mut Rng) -> Result<Vec<f64>, AgentError> {
        let a = self.target_actions(&batch.next_states, rng)?;
        let mut next: Option<Vec<f64>> = None;
        for t in &self.critic_targets {
            let q = q_values(t, &batch.next_states, &a)?;
            next = Some(match next {
                None => q,
                Some(m) => m.iter().zip(&q).map(|(x, y)| x.min(*y)).collect(),
            });
        }
        let g = self.config.discount;
        let y: Vec<f64> = batch
            .rewards
            .iter()
            .zip(next.expect("at least one critic"))
            .map(|(r, q)| r + g * q)
            .collect();
        if !y.iter().all(|v| v.is_finite()) {
            return Err(AgentError::NonFinite("critic target"));
        }
        Ok(y)
    }

    pub fn update(&mut self, batch: &LabeledBatch, rng: &mut Rng) -> Result<StepLosses, AgentError> {
        let targets = self.critic_targets(batch, rng)?;
        let inputs = Matrix::hcat(&batch.states, &batch.actions);
        let mut critic = 0.0;
        for c in &mut self.critics {
            let (loss, g) = regression_loss(&c.net, &inputs, &targets)?;
            if !loss.is_finite() {
                return Err(AgentError::NonFinite("critic loss"));
            }
            c.step(&g, self.config.critic_lr)?;
            critic += loss;
        }
        critic /= self.critics.len() as f64;
        self.updates += 1;

        let mut actor = f64::NAN;
        if self.updates % self.config.policy_delay.max(1) == 0 {
            let (loss, g) = match self.objective {
                ActorObjective::MaxQ => policy_loss(&self.policy, &self.critics[0].net, &batch.states)?,
                ActorObjective::QPlusBc => td3bc_actor_loss(
                    &self.policy,
                    &self.critics[0].net,
                    &batch.states,
                    &batch.actions,
                    self.config.td3bc_alpha,
                )?,
            };
            if !loss.is_finite() {
                return Err(AgentError::NonFinite("actor loss"));
            }
            self.policy_adam
                .step(self.policy.net_mut(), &g, self.config.actor_lr)?;
            actor = loss;
            let (rho, rule) = (self.config.target_retention, self.config.soft_update);
            soft_update(self.policy_target.net_mut(), self.policy.net(), rho, rule)?;
            for (t, c) in self.critic_targets.iter_mut().zip(&self.critics) {
                soft_update(t, &c.net, rho, rule)?;
            }
        }
        Ok(StepLosses {
            critic,
            value: f64::NAN,
            actor,
        })
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint) {
        ckpt.push_mlp("policy", self.policy.net());
        ckpt.push_adam("policy", self.policy.net(), &self.policy_adam);
        ckpt.push_mlp("policy_target", self.policy_target.net());
        for (k, (c, t)) in self.critics.iter().zip(&self.critic_targets).enumerate() {
            c.save_to(ckpt, &format!("q{k}"));
            ckpt.push_mlp(&format!("q{k}_target"), t);
        }
        ckpt.push_scalar("updates", self.updates as f64);
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<(), AgentError> {
        ckpt.restore_mlp("policy", self.policy.net_mut())?;
        ckpt.restore_adam("policy", self.policy.net(), &mut self.policy_adam)?;
        ckpt.restore_mlp("policy_target", self.policy_target.net_mut())?;
        for (k, (c, t)) in self.critics.iter_mut().zip(&mut self.critic_targets).enumerate() {
            c.restore_from(ckpt, &format!("q{k}"))?;
            ckpt.restore_mlp(&format!("q{k}_target"), t)?;
        }
        self.updates = ckpt.scalar("updates")? as u64;
        Ok(())
    }
}

/// Plain DDPG update on a single critic, written without the TD3 switches.
pub fn ddpg_update(agent: &mut ActorCritic, batch: &LabeledBatch) -> Result<StepLosses, AgentError> {
    let a = agent.policy_target.act_batch(&batch.next_states)?;
    let next = q_values(&agent.critic_targets[0], &batch.next_states, &a)?;
    let g = agent.config.discount;
    let y: Vec<f64> = batch.rewards.iter().zip(&next).map(|(r, q)| r + g * q).collect();
    if !y.iter().all(|v| v.is_finite()) {
        return Err(AgentError::NonFinite("critic target"));
    }
    let inputs = Matrix::hcat(&batch.states, &batch.actions);
    let (critic, gq) = regression_loss(&agent.critics[0].net, &inputs, &y)?;
    agent.critics[0].step(&gq, agent.config.critic_lr)?;
    let (actor, gp) = policy_loss(&agent.policy, &agent.critics[0].net, &batch.states)?;
    agent
        .policy_adam
        .step(agent.policy.net_mut(), &gp, agent.config.actor_lr)?;
    let (rho, rule) = (agent.config.target_retention, agent.config.soft_update);
    soft_update(agent.policy_target.net_mut(), agent.policy.net(), rho, rule)?;
    soft_update(&mut agent.critic_targets[0], &agent.critics[0].net, rho, rule)?;
    agent.updates += 1;
    if !(critic.is_finite() && actor.is_finite()) {
        return Err(AgentError::NonFinite("loss"));
    }
    Ok(StepLosses {
        critic,
        value: f64::NAN,
        actor,
    })
}

/// Behavior cloning: regress actions on states, no reward involved.
#[derive(Debug, Clone, PartialEq)]
pub struct IlAgent {
    pub policy: Policy,
    pub policy_adam: Adam,
    pub actor_lr: f64,
}

impl IlAgent {
    pub fn new(policy: Policy, actor_lr: f64) -> Self {
        Self {
            policy_adam: Adam::new(policy.net()),
            policy,
            actor_lr,
        }
    }

    pub fn update(&mut self, states: &Matrix, actions: &Matrix) -> Result<StepLosses, AgentError> {
        let (loss, g) = weighted_bc_loss(&self.policy, states, actions, None)?;
        if !loss.is_finite() {
            return Err(AgentError::NonFinite("imitation loss"));
        }
        self.policy_adam
            .step(self.policy.net_mut(), &g, self.actor_lr)?;
        Ok(StepLosses {
            critic: f64::NAN,
            value: f64::NAN,
            actor: loss,
        })
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint) {
        ckpt.push_mlp("policy", self.policy.net());
        ckpt.push_adam("policy", self.policy.net(), &self.policy_adam);
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint) -> Result<(), AgentError> {
        ckpt.restore_mlp("policy", self.policy.net_mut())?;
        ckpt.restore_adam("policy", self.policy.net(), &mut self.policy_adam)?;
        Ok(())
    }
}

/// IQL: expectile V, Q onto `r + gamma V(s')`, advantage-weighted cloning.
#[derive(Debug, Clone, PartialEq)]
pub struct IqlAgent {
    pub q: Trainable,
    pub q_target: Mlp,
    pub v: Trainable,
    pub policy: Policy,
    pub policy_adam: Adam,
    pub config: BaselineConfig,
}

impl IqlAgent {
    pub fn new(q: Mlp, v: Mlp, policy: Policy, config: BaselineConfig) -> Self {
        Self {
            q_target: q.clone(),
            q: Trainable::new(q),
            v: Trainable::new(v),
            policy_adam: Adam::new(policy.net()),
            policy,
            config,
        }
    }

    /// `min(exp(beta (Q_target(s, a) - V(s))), clip)`
    pub fn weights(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>, AgentError> {
        let q = q_values(&self.q_target, states, actions)?;
        let v = values(&self.v.net, states)?;
        let (beta, clip) = (self.config.iql_beta, self.config.iql_weight_clip);
        Ok(q.iter()
            .zip(&v)
            .map(|(q, v)| (beta * (q - v)).exp().min(clip))
            .collect())
    }

    pub fn update(&mut self, batch: &LabeledBatch) -> Result<StepLosses, AgentError> {
        let cfg = &self.config;
        let tq = q_values(&self.q_target, &batch.states, &batch.actions)?;
        let (value, gv) = expectile_regression(&self.v.net, &batch.states, &tq, cfg.expectile)?;
        self.v.step(&gv, cfg.critic_lr)?;

        let next_v = values(&self.v.net, &batch.next_states)?;
        let y: Vec<f64> = batch
            .rewards
            .iter()
            .zip(&next_v)
            .map(|(r, v)| r + cfg.discount * v)
            .collect();
        let inputs = Matrix::hcat(&batch.states, &batch.actions);
        let (critic, gq) = regression_loss(&self.q.net, &inputs, &y)?;
        self.q.step(&gq, cfg.critic_lr)?;

        let w = self.weights(&batch.states, &batch.actions)?;
        let (actor, gp) = weighted_bc_loss(&self.policy, &batch.states, &batch.actions, Some(&w))?;
        self.policy_adam
            .step(self.policy.net_mut(), &gp, self.config.actor_lr)?;
        soft_update(
            &mut self.q_target,
            &self.q.net,
            self.config.target_retention,
            self.config.soft_update,
        )?;
        if !(value.is_finite() && critic.is_finite() && actor.is_finite()) {
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

/// Initial networks for every algorithm, drawn from fixed sub-streams so
/// matched seeds give matched starting points.
pub fn init_networks(
    seed: u64,
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
    hidden_layers: usize,
) -> (Policy, Mlp, Mlp, Mlp) {
    use crate::rng::{stream_rng, streams};
    let policy = Policy::new(
        state_dim,
        action_dim,
        hidden,
        hidden_layers,
        &mut stream_rng(seed, streams::INIT, 0),
    );
    let q1 = init_critic(state_dim, action_dim, hidden, hidden_layers, &mut stream_rng(seed, streams::INIT, 1));
    let q2 = init_critic(state_dim, action_dim, hidden, hidden_layers, &mut stream_rng(seed, streams::INIT, 2));
    let v = init_value(state_dim, hidden, hidden_layers, &mut stream_rng(seed, streams::INIT, 3));
    (policy, q1, q2, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng as _;

    fn jitter(rng: &mut Rng) -> f64 {
        rng.random_range(-1.0..1.0)
    }

    fn batch(rng: &mut Rng, n: usize, ds: usize, da: usize) -> LabeledBatch {
        let mut m = |c: usize, scale: f64| {
            Matrix::from_vec(n, c, (0..n * c).map(|_| scale * jitter(rng)).collect())
        };
        LabeledBatch {
            states: m(ds, 1.0),
            actions: m(da, 0.9),
            next_states: m(ds, 1.0),
            rewards: (0..n).map(|_| jitter(rng)).collect(),
        }
    }

    #[test]
    fn bc_term_vanishes_on_exact_actions() {
        let mut rng = stream_rng(0, 0, 0);
        let p = Policy::new(3, 2, 8, 1, &mut rng);
        let s = Matrix::from_rows(&[[0.1, 0.2, 0.3]]);
        let a = p.act_batch(&s).unwrap();
        let (loss, g) = weighted_bc_loss(&p, &s, &a, None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn iql_weights_are_positive_and_capped() {
        let (p, q, _, v) = init_networks(1, 3, 2, 8, 1);
        let cfg = BaselineConfig {
            iql_beta: 50.0,
            iql_weight_clip: 7.0,
            ..BaselineConfig::default()
        };
        let agent = IqlAgent::new(q, v, p, cfg);
        let mut rng = stream_rng(1, 0, 0);
        let b = batch(&mut rng, 64, 3, 2);
        let w = agent.weights(&b.states, &b.actions).unwrap();
        assert!(w.iter().all(|&x| x > 0.0 && x <= 7.0));
    }

    #[test]
    fn delayed_policy_changes_only_on_multiples() {
        let (p, q1, q2, _) = init_networks(2, 3, 2, 8, 1);
        let cfg = BaselineConfig {
            policy_delay: 3,
            actor_lr: 1e-2,
            ..BaselineConfig::default()
        };
        let mut td3 = ActorCritic::new(p, vec![q1, q2], cfg, ActorObjective::MaxQ);
        let mut rng = stream_rng(2, 0, 0);
        for k in 1..=9u64 {
            let before = td3.policy.clone();
            let b = batch(&mut rng, 16, 3, 2);
            td3.update(&b, &mut rng).unwrap();
            assert_eq!(td3.policy.net().bits_eq(before.net()), k % 3 != 0, "step {k}");
        }
    }

    #[test]
    fn identical_twins_match_single_critic_target() {
        let (p, q1, _, _) = init_networks(3, 3, 2, 8, 1);
        let twin = ActorCritic::new(
            p.clone(),
            vec![q1.clone(), q1.clone()],
            BaselineConfig::default(),
            ActorObjective::MaxQ,
        );
        let single = ActorCritic::new(p, vec![q1], BaselineConfig::default(), ActorObjective::MaxQ);
        let mut rng = stream_rng(3, 0, 0);
        let b = batch(&mut rng, 16, 3, 2);
        let a = twin.critic_targets(&b, &mut stream_rng(4, 0, 0)).unwrap();
        let c = single.critic_targets(&b, &mut stream_rng(4, 0, 0)).unwrap();
        assert_eq!(a, c);
    }
}
