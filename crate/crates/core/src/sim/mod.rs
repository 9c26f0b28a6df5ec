//! Session-based user simulator standing in for platform logs.
//!
//! Each user has a unit latent preference `p` over the action space and a
//! latent engagement `e` in `[0, 1]`. A recommendation `a` yields
//! satisfaction `cos(a, p) - lambda max(0, 1 - |a|)^2`, which moves engagement
//! up or down. Engagement sets how long a session lasts and how soon the user
//! returns. The observed state holds noisy static features that linearly
//! encode `p`, followed by behavioral aggregates.

mod dataset;
mod levels;

pub use dataset::{
    generate_dataset, read_heldout, write_heldout, write_levels_csv, Dataset, DatasetConfig,
    HeldoutUser,
};
pub use levels::{
    engagement_level, level_histogram, scripted_teacher, session_levels, session_stats,
    EngagementLevels, LevelKind, SessionStats, Task, MAX_LEVEL,
};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::buffers::BufferError;
use crate::policy::{Actor, Policy};
use crate::rng::Rng;

/// Number of behavioral aggregate features at the end of each state.
pub const DYNAMIC_FEATURES: usize = 8;
const FEATURE_CLIP: f64 = 5.0;
const FEEDBACK_DECAY: f64 = 0.8;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator setting: {0}")]
    Invalid(String),
    #[error("infeasible dataset: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Constants of the user dynamics and of the logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Std of the noise on informative static features.
    pub feature_noise: f64,
    /// Weight of `p` in the logging policy's mean action.
    pub behavior_alignment: f64,
    /// Weight of the global popularity direction in the logging policy.
    pub popularity_weight: f64,
    /// Weight of the taste direction all users share in each latent
    /// preference, in `[0, 1]`.
    pub shared_taste: f64,
    /// Std of the logging policy's per-session offset.
    pub session_noise: f64,
    /// Std of the logging policy's per-request jitter.
    pub request_noise: f64,
    /// `lambda` in the satisfaction penalty on sub-unit action norms.
    pub amplitude_penalty: f64,
    /// Engagement change per unit of satisfaction above baseline.
    pub engagement_rate: f64,
    pub satisfaction_baseline: f64,
    pub min_depth: f64,
    /// Extra requests per unit engagement.
    pub depth_span: f64,
    /// Half-width of the uniform per-session depth noise.
    pub depth_noise: f64,
    pub max_depth: usize,
    pub base_gap_hours: f64,
    /// Revisit interval scales with `exp(-gap_sensitivity * e)`.
    pub gap_sensitivity: f64,
    /// Half-width of the uniform relative revisit noise.
    pub gap_noise: f64,
    /// Fraction of the drift back to baseline engagement between sessions.
    pub reversion: f64,
    pub feedback_noise: f64,
    /// Half-width of the uniform jitter on seconds between requests.
    pub request_jitter: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            feature_noise: 0.5,
            behavior_alignment: 0.35,
            popularity_weight: 0.5,
            shared_taste: 0.6,
            session_noise: 0.35,
            request_noise: 0.1,
            amplitude_penalty: 0.5,
            engagement_rate: 0.04,
            satisfaction_baseline: 0.3,
            min_depth: 3.0,
            depth_span: 20.0,
            depth_noise: 2.0,
            max_depth: 60,
            base_gap_hours: 24.0,
            gap_sensitivity: 2.0,
            gap_noise: 0.2,
            reversion: 0.3,
            feedback_noise: 0.1,
            request_jitter: 10.0,
        }
    }
}

impl SimParams {
    /// Same dynamics with every noise source scaled by `k`.
    pub fn with_noise_scale(mut self, k: f64) -> Self {
        self.feature_noise *= k;
        self.depth_noise *= k;
        self.gap_noise *= k;
        self.feedback_noise *= k;
        self.request_jitter *= k;
        self.session_noise *= k;
        self.request_noise *= k;
        self
    }

    pub fn noiseless() -> Self {
        Self::default().with_noise_scale(0.0)
    }
}

/// Fixed per-dataset quantities: the feature mixing matrix, the popularity
/// direction favored by the logging policy, and the shared taste direction.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub state_dim: usize,
    pub action_dim: usize,
    /// `informative x action_dim`, row-major.
    pub mixing: Vec<f64>,
    pub popularity: Vec<f64>,
    /// Unit vector orthogonal to `popularity`.
    pub taste: Vec<f64>,
    pub params: SimParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub id: u64,
    pub static_features: Vec<f64>,
    /// Unit norm.
    pub preference: Vec<f64>,
    /// Baseline engagement in `[0, 1]`.
    pub engagement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub time: f64,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub start: f64,
    pub exit: f64,
    pub requests: Vec<Request>,
}

impl Session {
    pub fn depth(&self) -> usize {
        self.requests.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub sessions: Vec<Session>,
    /// Start of the first visit after the logged window, if known.
    pub return_time: Option<f64>,
    /// State observed at that visit; successor of the last logged request.
    pub final_state: Vec<f64>,
    /// Latent engagement at the start of every session.
    pub engagement: Vec<f64>,
}

impl SessionLog {
    pub fn num_requests(&self) -> usize {
        self.sessions.iter().map(|s| s.depth()).sum()
    }

    pub fn requests(&self) -> impl Iterator<Item = &Request> {
        self.sessions.iter().flat_map(|s| &s.requests)
    }

    /// Index of the session containing each request, in request order.
    pub fn session_of_request(&self) -> Vec<usize> {
        self.sessions
            .iter()
            .enumerate()
            .flat_map(|(i, s)| std::iter::repeat_n(i, s.depth()))
            .collect()
    }
}

/// Anything that picks actions inside the simulator.
pub trait Recommender {
    fn begin_session(&mut self, _user: &UserProfile, _rng: &mut Rng) {}
    fn recommend(&mut self, user: &UserProfile, state: &[f64], rng: &mut Rng) -> Vec<f64>;
}

impl<T: Recommender + ?Sized> Recommender for &mut T {
    fn begin_session(&mut self, user: &UserProfile, rng: &mut Rng) {
        (**self).begin_session(user, rng)
    }

    fn recommend(&mut self, user: &UserProfile, state: &[f64], rng: &mut Rng) -> Vec<f64> {
        (**self).recommend(user, state, rng)
    }
}

impl Recommender for Policy {
    fn recommend(&mut self, _user: &UserProfile, state: &[f64], _rng: &mut Rng) -> Vec<f64> {
        self.act(state).expect("policy input matches the simulator state")
    }
}

impl Recommender for Actor {
    fn recommend(&mut self, _user: &UserProfile, state: &[f64], _rng: &mut Rng) -> Vec<f64> {
        self.act(state).expect("policy input matches the simulator state")
    }
}

/// Policy that knows `p` exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Recommender for OraclePolicy {
    fn recommend(&mut self, user: &UserProfile, _state: &[f64], _rng: &mut Rng) -> Vec<f64> {
        user.preference.clone()
    }
}

/// Recommends `-p`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AdversarialPolicy;

impl Recommender for AdversarialPolicy {
    fn recommend(&mut self, user: &UserProfile, _state: &[f64], _rng: &mut Rng) -> Vec<f64> {
        user.preference.iter().map(|v| -v).collect()
    }
}

/// The logging policy: partially aligned with `p`, biased toward a global
/// popular direction, with a per-session offset and per-request jitter.
#[derive(Debug, Clone)]
pub struct BehaviorPolicy {
    popularity: Vec<f64>,
    params: SimParams,
    offset: Vec<f64>,
}

impl BehaviorPolicy {
    pub fn new(world: &World) -> Self {
        Self {
            popularity: world.popularity.clone(),
            params: world.params.clone(),
            offset: vec![0.0; world.action_dim],
        }
    }
}

impl Recommender for BehaviorPolicy {
    fn begin_session(&mut self, _user: &UserProfile, rng: &mut Rng) {
        let sd = self.params.session_noise;
        for o in &mut self.offset {
            *o = sd * gaussian(rng);
        }
    }

    fn recommend(&mut self, user: &UserProfile, _state: &[f64], rng: &mut Rng) -> Vec<f64> {
        let p = &self.params;
        user.preference
            .iter()
            .zip(&self.popularity)
            .zip(&self.offset)
            .map(|((u, g), o)| {
                (p.behavior_alignment * u
                    + p.popularity_weight * g
                    + o
                    + p.request_noise * gaussian(rng))
                .clamp(-1.0, 1.0)
            })
            .collect()
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = norm(&v);
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `cos(a, p) - lambda max(0, 1 - |a|)^2`; `p` is unit norm. A zero action
/// has cosine 0.
pub fn satisfaction(action: &[f64], preference: &[f64], amplitude_penalty: f64) -> f64 {
    let n = norm(action);
    let cos = if n > 1e-12 {
        action.iter().zip(preference).map(|(a, p)| a * p).sum::<f64>() / n
    } else {
        0.0
    };
    cos - amplitude_penalty * (1.0 - n).max(0.0).powi(2)
}

/// Running behavioral aggregates that make up the tail of the state.
#[derive(Debug, Clone, Default)]
struct Aggregates {
    last_depth: f64,
    last_log_gap: f64,
    depth_sum: f64,
    log_gap_sum: f64,
    sessions: f64,
    last_feedback: f64,
    feedback_ema: f64,
}

impl Aggregates {
    fn features(&self, position: usize) -> [f64; DYNAMIC_FEATURES] {
        let mean = |s: f64| if self.sessions > 0.0 { s / self.sessions } else { 0.0 };
        [
            position as f64 / 10.0,
            self.last_depth / 20.0,
            self.last_log_gap / 3.0,
            mean(self.depth_sum) / 20.0,
            mean(self.log_gap_sum) / 3.0,
            self.last_feedback,
            self.feedback_ema,
            self.sessions / 10.0,
        ]
    }

    fn feedback(&mut self, f: f64) {
        self.last_feedback = f;
        self.feedback_ema = FEEDBACK_DECAY * self.feedback_ema + (1.0 - FEEDBACK_DECAY) * f;
    }

    fn end_session(&mut self, depth: usize, gap_seconds: f64) {
        let log_gap = (gap_seconds / 3600.0).ln_1p();
        self.last_depth = depth as f64;
        self.last_log_gap = log_gap;
        self.depth_sum += depth as f64;
        self.log_gap_sum += log_gap;
        self.sessions += 1.0;
    }
}

impl World {
    /// Draws the mixing matrix and the popularity and taste directions.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        params: SimParams,
        rng: &mut Rng,
    ) -> Result<Self, SimError> {
        if action_dim == 0 {
            return Err(SimError::Invalid("action_dim must be positive".into()));
        }
        if state_dim <= DYNAMIC_FEATURES {
            return Err(SimError::Invalid(format!(
                "state_dim must exceed {DYNAMIC_FEATURES}, got {state_dim}"
            )));
        }
        let informative = (2 * action_dim).min(state_dim - DYNAMIC_FEATURES);
        let mixing = (0..informative * action_dim).map(|_| gaussian(rng)).collect();
        let popularity = unit_vector(rng, action_dim);
        let taste = loop {
            let mut t = unit_vector(rng, action_dim);
            let proj: f64 = t.iter().zip(&popularity).map(|(a, b)| a * b).sum();
            t.iter_mut().zip(&popularity).for_each(|(a, g)| *a -= proj * g);
            let n = norm(&t);
            if n > 1e-6 || action_dim == 1 {
                break t.into_iter().map(|x| if n > 1e-6 { x / n } else { 0.0 }).collect::<Vec<_>>();
            }
        };
        Ok(Self {
            state_dim,
            action_dim,
            mixing,
            popularity,
            taste,
            params,
        })
    }

    pub fn static_dim(&self) -> usize {
        self.state_dim - DYNAMIC_FEATURES
    }

    pub fn informative_dim(&self) -> usize {
        self.mixing.len() / self.action_dim
    }

    pub fn sample_user(&self, id: u64, rng: &mut Rng) -> UserProfile {
        let own = unit_vector(rng, self.action_dim);
        let w = self.params.shared_taste.clamp(0.0, 1.0);
        let mixed: Vec<f64> = own
            .iter()
            .zip(&self.taste)
            .map(|(u, t)| w * t + (1.0 - w * w).sqrt() * u)
            .collect();
        let n = norm(&mixed);
        let preference = if n > 1e-8 {
            mixed.into_iter().map(|x| x / n).collect()
        } else {
            own
        };
        let engagement = rng.random_range(0.2..0.6);
        let k = self.informative_dim();
        let mut static_features = Vec::with_capacity(self.static_dim());
        for i in 0..k {
            let row = &self.mixing[i * self.action_dim..(i + 1) * self.action_dim];
            let signal: f64 = row.iter().zip(&preference).map(|(m, p)| m * p).sum();
            static_features.push(signal + self.params.feature_noise * gaussian(rng));
        }
        while static_features.len() < self.static_dim() {
            static_features.push(gaussian(rng));
        }
        for v in &mut static_features {
            *v = quantize(v.clamp(-FEATURE_CLIP, FEATURE_CLIP));
        }
        UserProfile {
            id,
            static_features,
            preference,
            engagement,
        }
    }

    fn state(&self, user: &UserProfile, agg: &Aggregates, position: usize) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.state_dim);
        s.extend_from_slice(&user.static_features);
        s.extend(
            agg.features(position)
                .iter()
                .map(|v| quantize(v.clamp(-FEATURE_CLIP, FEATURE_CLIP))),
        );
        s
    }

    /// Runs `sessions` sessions of `user` under `rec`.
    pub fn simulate_user<R: Recommender + ?Sized>(
        &self,
        user: &UserProfile,
        rec: &mut R,
        sessions: usize,
        rng: &mut Rng,
    ) -> SessionLog {
        let p = &self.params;
        let mut e = user.engagement;
        let mut agg = Aggregates::default();
        let mut now = 0.0;
        let mut log = SessionLog {
            sessions: Vec::with_capacity(sessions),
            return_time: None,
            final_state: Vec::new(),
            engagement: Vec::with_capacity(sessions),
        };
        for k in 0..sessions {
            if k > 0 {
                e += p.reversion * (user.engagement - e);
            }
            log.engagement.push(e);
            rec.begin_session(user, rng);
            let depth_offset = p.depth_noise * rng.random_range(-1.0..=1.0);
            let start = now;
            let mut t = start;
            let mut requests = Vec::new();
            loop {
                let state = self.state(user, &agg, requests.len());
                let mut action = rec.recommend(user, &state, rng);
                for a in &mut action {
                    *a = if a.is_finite() { a.clamp(-1.0, 1.0) } else { 0.0 };
                }
                let sat = satisfaction(&action, &user.preference, p.amplitude_penalty);
                e = (e + p.engagement_rate * (sat - p.satisfaction_baseline)).clamp(0.0, 1.0);
                agg.feedback(sat + p.feedback_noise * gaussian(rng));
                requests.push(Request {
                    time: t,
                    state,
                    action,
                });
                let n = requests.len();
                if n >= p.max_depth || n as f64 >= p.min_depth + p.depth_span * e + depth_offset {
                    break;
                }
                t += 30.0 + p.request_jitter * rng.random_range(-1.0..=1.0);
            }
            let exit = t + 30.0;
            let depth = requests.len();
            log.sessions.push(Session {
                start,
                exit,
                requests,
            });
            let gap = 3600.0
                * p.base_gap_hours
                * (-p.gap_sensitivity * e).exp()
                * (1.0 + p.gap_noise * rng.random_range(-1.0..=1.0));
            agg.end_session(depth, gap);
            now = exit + gap;
        }
        log.return_time = Some(now);
        log.final_state = self.state(user, &agg, 0);
        log
    }
}

/// Observations are logged at four decimals.
fn quantize(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}
