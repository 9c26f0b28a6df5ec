//! Flat `key = value` run configuration with `#` comments, presets, range
//! validation and conversion into the per-module configs.
//!
//! Precedence, lowest first: preset, config file keys, command-line flags.
//! A file may name its base with `preset = <name>`; otherwise the caller's
//! default preset applies.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::agent::{AgentConfig, SoftUpdate, TdMode};
use crate::baselines::BaselineConfig;
use crate::eval::PropensityModel;
use crate::sim::{DatasetConfig, SimParams, Task};
use crate::train::{Algo, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` is set twice")]
    Duplicate(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unknown preset `{0}` (expected reference, desk or wide-state)")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Only Adam is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
}

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(f64, u64, usize, bool, Task, Algo);

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(None),
            v => v.parse().map(Some).map_err(|e| format!("{e}")),
        }
    }
    fn show(&self) -> String {
        self.map_or("none".to_string(), |v| v.to_string())
    }
}

impl ConfigValue for SoftUpdate {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "retention" => Ok(SoftUpdate::Retention),
            "literal" => Ok(SoftUpdate::Literal),
            _ => Err("expected retention or literal".into()),
        }
    }
    fn show(&self) -> String {
        match self {
            SoftUpdate::Retention => "retention",
            SoftUpdate::Literal => "literal",
        }
        .into()
    }
}

impl ConfigValue for Optimizer {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            _ => Err("only adam is supported".into()),
        }
    }
    fn show(&self) -> String {
        "adam".into()
    }
}

macro_rules! run_config {
    ($($key:ident : $ty:ty = $default:expr, $doc:literal;)*) => {
        /// Every setting of a run. Defaults are the `reference` preset.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $key: $ty,)*
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            pub fn reference() -> Self {
                Self { $($key: $default,)* }
            }

            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                let bad = |reason: String| ConfigError::Value {
                    key: key.to_string(),
                    value: value.to_string(),
                    reason,
                };
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value).map_err(bad)?
                    })*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            /// Every key with its value in text form, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($key), self.$key.show())),*]
            }
        }
    };
}

run_config! {
    seed: u64 = 0, "Root of every random stream.";
    task: Task = Task::Mixture, "depth, frequency or mixture.";
    algo: Algo = Algo::PrefRec, "prefrec, ddpg, td3, td3_bc, il or iql.";
    optimizer: Optimizer = Optimizer::Adam, "Optimizer of every network.";
    actor_lr: f64 = 5e-6, "Policy learning rate.";
    critic_lr: f64 = 5e-5, "Q and V learning rate.";
    reward_lr: f64 = 1e-3, "Reward model learning rate.";
    state_dim: usize = 32, "State dimension.";
    action_dim: usize = 8, "Action dimension.";
    hidden: usize = 256, "Hidden layer width of every network.";
    hidden_layers: usize = 2, "Hidden layers of every network.";
    batch_size: usize = 4096, "Transitions per update.";
    preference_batch_size: usize = 256, "Preference pairs per reward step.";
    normalize_observations: bool = true, "Standardize states with replay statistics.";
    gradient_clipping: bool = false, "Must stay false; no clipping is applied.";
    fine_tune: bool = true, "Fine-tune the reward model during policy training.";
    finetune_interval: usize = 0, "Updates between fine-tuning steps; 0 means once per epoch.";
    discount: f64 = 0.9, "Discount factor gamma.";
    expectile: f64 = 0.7, "Expectile tau of the value regression.";
    target_retention: f64 = 0.999, "Fraction of the target network kept per soft update.";
    soft_update: SoftUpdate = SoftUpdate::Retention, "retention or literal reading of target_retention.";
    segment_length: usize = 100, "Requests per preference segment.";
    preference_capacity: usize = 20_000, "Preference buffer size.";
    replay_capacity: usize = 3_000_000, "Replay buffer size.";
    pretrain_epochs: usize = 3, "Reward pretraining epochs.";
    epochs: usize = 5, "Policy training epochs.";
    iterations: usize = 1000, "Updates per epoch.";
    eval_interval: usize = 200, "Updates between metrics rows.";
    users: usize = 1250, "Simulated users, training plus held-out.";
    heldout_fraction: f64 = 0.2, "Share of users held out for evaluation.";
    sessions_per_user: usize = 30, "Logged sessions per user.";
    min_requests: usize = 200, "Minimum history for a user to supply segments.";
    preference_pairs: usize = 20_000, "Labeled pairs drawn by the teacher.";
    teacher_margin: f64 = 0.0, "Score gap below which the teacher answers equal.";
    eval_users: usize = 200, "Held-out users scored by evaluation.";
    eval_sessions: usize = 20, "Simulated sessions per user for the cumulative level.";
    propensity_bandwidth: f64 = 1.0, "Kernel bandwidth h of the propensity model.";
    propensity_cap: f64 = 10.0, "Weight cap c of the propensity model.";
    policy_delay: u64 = 2, "TD3 critic steps per actor step.";
    target_noise: f64 = 0.2, "TD3 target policy noise std.";
    target_noise_clip: f64 = 0.5, "TD3 target noise clip.";
    twin_critics: bool = true, "TD3 clipped double Q.";
    td3bc_alpha: f64 = 2.5, "TD3_BC Q-term weight alpha.";
    iql_beta: f64 = 3.0, "IQL advantage temperature.";
    iql_weight_clip: f64 = 100.0, "IQL advantage weight cap.";
    sim_feature_noise: f64 = 0.5, "Noise std on informative static features.";
    sim_behavior_alignment: f64 = 0.35, "Weight of the user preference in logged actions.";
    sim_popularity_weight: f64 = 0.5, "Weight of the popular direction in logged actions.";
    sim_shared_taste: f64 = 0.6, "Weight of the shared taste in every preference.";
    sim_session_noise: f64 = 0.35, "Per-session offset std of logged actions.";
    sim_request_noise: f64 = 0.1, "Per-request jitter std of logged actions.";
    sim_amplitude_penalty: f64 = 0.5, "Satisfaction penalty on sub-unit action norms.";
    sim_engagement_rate: f64 = 0.04, "Engagement change per unit satisfaction.";
    sim_satisfaction_baseline: f64 = 0.3, "Satisfaction with no engagement change.";
    sim_min_depth: f64 = 3.0, "Shortest expected session.";
    sim_depth_span: f64 = 20.0, "Extra requests per unit engagement.";
    sim_depth_noise: f64 = 2.0, "Half-width of the session depth noise.";
    sim_max_depth: usize = 60, "Longest session.";
    sim_base_gap_hours: f64 = 24.0, "Revisit interval at zero engagement.";
    sim_gap_sensitivity: f64 = 2.0, "Revisit interval decay per unit engagement.";
    sim_gap_noise: f64 = 0.2, "Half-width of the relative revisit noise.";
    sim_reversion: f64 = 0.3, "Drift back to baseline engagement between sessions.";
    sim_feedback_noise: f64 = 0.1, "Noise std on the feedback features.";
    sim_request_jitter: f64 = 10.0, "Half-width of the jitter on seconds between requests.";
    no_pretrain: bool = false, "Skip reward pretraining.";
    no_finetune: bool = false, "Skip reward fine-tuning.";
    naive_td: bool = false, "Bootstrap Q from Q_target(s', pi(s')) instead of V(s').";
    tau: Option<f64> = None, "Overrides expectile when set.";
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl RunConfig {
    pub const PRESETS: [&'static str; 3] = ["reference", "desk", "wide-state"];

    /// `reference`: the full-size hyperparameters. `desk`: the same learning
    /// rates, discount, expectile and schedule with narrower networks,
    /// smaller batches and fewer preference pairs, sized for one CPU.
    /// `wide-state`: `desk` with 245-dimensional states.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "reference" => Ok(Self::reference()),
            "desk" => Ok(Self {
                hidden: 64,
                batch_size: 256,
                preference_pairs: 4000,
                eval_interval: 500,
                ..Self::reference()
            }),
            "wide-state" => Ok(Self {
                state_dim: 245,
                ..Self::preset("desk")?
            }),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses config text on top of `base_preset`, or of the preset the text
    /// names.
    pub fn parse(text: &str, base_preset: &str) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        let mut preset = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if k == "preset" {
                if preset.replace(v).is_some() {
                    return Err(ConfigError::Duplicate(k.to_string()));
                }
                continue;
            }
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
            pairs.push((k, v));
        }
        let mut cfg = Self::preset(preset.unwrap_or(base_preset))?;
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, base_preset: &str) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, base_preset)
    }

    /// Every key, one per line; parses back to an equal config.
    pub fn snapshot(&self) -> String {
        let mut out = String::from("# resolved run configuration\n");
        for (k, v) in self.entries() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn effective_expectile(&self) -> f64 {
        self.tau.unwrap_or(self.expectile)
    }

    pub fn effective_pretrain_epochs(&self) -> usize {
        if self.no_pretrain {
            0
        } else {
            self.pretrain_epochs
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return fail(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        let tau = self.effective_expectile();
        if !(0.5..1.0).contains(&tau) {
            return fail(format!("expectile must lie in [0.5, 1), got {tau}"));
        }
        if !(0.0..=1.0).contains(&self.target_retention) {
            return fail(format!(
                "target_retention must lie in [0, 1], got {}",
                self.target_retention
            ));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return fail(format!(
                "heldout_fraction must lie in [0, 1), got {}",
                self.heldout_fraction
            ));
        }
        if self.gradient_clipping {
            return fail("gradient_clipping is not supported".into());
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("reward_lr", self.reward_lr),
            ("propensity_bandwidth", self.propensity_bandwidth),
            ("propensity_cap", self.propensity_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("state_dim", self.state_dim),
            ("action_dim", self.action_dim),
            ("hidden", self.hidden),
            ("hidden_layers", self.hidden_layers),
            ("batch_size", self.batch_size),
            ("preference_batch_size", self.preference_batch_size),
            ("segment_length", self.segment_length),
            ("preference_capacity", self.preference_capacity),
            ("replay_capacity", self.replay_capacity),
            ("iterations", self.iterations),
            ("eval_interval", self.eval_interval),
            ("users", self.users),
            ("sessions_per_user", self.sessions_per_user),
            ("eval_users", self.eval_users),
            ("eval_sessions", self.eval_sessions),
            ("sim_max_depth", self.sim_max_depth),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.policy_delay == 0 {
            return fail("policy_delay must be positive".into());
        }
        if self.state_dim <= crate::sim::DYNAMIC_FEATURES {
            return fail(format!(
                "state_dim must exceed the {} behavioral features",
                crate::sim::DYNAMIC_FEATURES
            ));
        }
        if self.preference_pairs > self.preference_capacity {
            return fail(format!(
                "preference_pairs {} exceeds preference_capacity {}",
                self.preference_pairs, self.preference_capacity
            ));
        }
        if self.segment_length > self.min_requests {
            return fail(format!(
                "segment_length {} exceeds min_requests {}",
                self.segment_length, self.min_requests
            ));
        }
        if !(0.0..=1.0).contains(&self.sim_shared_taste) {
            return fail(format!(
                "sim_shared_taste must lie in [0, 1], got {}",
                self.sim_shared_taste
            ));
        }
        for (name, v) in [
            ("td3bc_alpha", self.td3bc_alpha),
            ("iql_beta", self.iql_beta),
            ("target_noise", self.target_noise),
            ("target_noise_clip", self.target_noise_clip),
            ("teacher_margin", self.teacher_margin),
            ("sim_feature_noise", self.sim_feature_noise),
            ("sim_session_noise", self.sim_session_noise),
            ("sim_request_noise", self.sim_request_noise),
            ("sim_amplitude_penalty", self.sim_amplitude_penalty),
            ("sim_depth_noise", self.sim_depth_noise),
            ("sim_gap_noise", self.sim_gap_noise),
            ("sim_feedback_noise", self.sim_feedback_noise),
            ("sim_request_jitter", self.sim_request_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(self.iql_weight_clip > 0.0) {
            return fail(format!("iql_weight_clip must be positive, got {}", self.iql_weight_clip));
        }
        if !(0.0..=1.0).contains(&self.sim_reversion) {
            return fail(format!("sim_reversion must lie in [0, 1], got {}", self.sim_reversion));
        }
        Ok(())
    }

    pub fn sim_params(&self) -> SimParams {
        SimParams {
            feature_noise: self.sim_feature_noise,
            behavior_alignment: self.sim_behavior_alignment,
            popularity_weight: self.sim_popularity_weight,
            shared_taste: self.sim_shared_taste,
            session_noise: self.sim_session_noise,
            request_noise: self.sim_request_noise,
            amplitude_penalty: self.sim_amplitude_penalty,
            engagement_rate: self.sim_engagement_rate,
            satisfaction_baseline: self.sim_satisfaction_baseline,
            min_depth: self.sim_min_depth,
            depth_span: self.sim_depth_span,
            depth_noise: self.sim_depth_noise,
            max_depth: self.sim_max_depth,
            base_gap_hours: self.sim_base_gap_hours,
            gap_sensitivity: self.sim_gap_sensitivity,
            gap_noise: self.sim_gap_noise,
            reversion: self.sim_reversion,
            feedback_noise: self.sim_feedback_noise,
            request_jitter: self.sim_request_jitter,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            users: self.users,
            heldout_fraction: self.heldout_fraction,
            sessions_per_user: self.sessions_per_user,
            min_requests: self.min_requests,
            preference_pairs: self.preference_pairs,
            segment_length: self.segment_length,
            teacher_margin: self.teacher_margin,
            task: self.task,
            params: self.sim_params(),
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            discount: self.discount,
            expectile: self.effective_expectile(),
            target_retention: self.target_retention,
            soft_update: self.soft_update,
            mode: if self.naive_td {
                TdMode::NaiveTd
            } else {
                TdMode::PrefRec
            },
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            discount: self.discount,
            target_retention: self.target_retention,
            soft_update: self.soft_update,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
            policy_delay: self.policy_delay,
            target_noise: self.target_noise,
            target_noise_clip: self.target_noise_clip,
            twin_critics: self.twin_critics,
            td3bc_alpha: self.td3bc_alpha,
            iql_beta: self.iql_beta,
            iql_weight_clip: self.iql_weight_clip,
            expectile: self.effective_expectile(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            iterations: self.iterations,
            batch_size: self.batch_size,
            preference_batch_size: self.preference_batch_size,
            eval_interval: self.eval_interval,
            fine_tune: self.fine_tune && !self.no_finetune,
            finetune_interval: self.finetune_interval,
            normalize_observations: self.normalize_observations,
        }
    }

    pub fn propensity(&self) -> PropensityModel {
        PropensityModel {
            bandwidth: self.propensity_bandwidth,
            cap: self.propensity_cap,
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.snapshot())
    }
}

impl FromStr for RunConfig {
    type Err = ConfigError;

    /// Parses on top of `reference`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, "reference")
    }
}
