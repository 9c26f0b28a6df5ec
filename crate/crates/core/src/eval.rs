//! Offline and simulated evaluation: capped importance weights, the
//! self-normalized per-user score, cumulative-level curves, and confidence
//! intervals.

use rayon::prelude::*;
use thiserror::Error;

use crate::nn::{Matrix, NnError};
use crate::policy::Actor;
use crate::rng::{stream_rng, streams};
use crate::sim::{session_levels, HeldoutUser, Recommender, SimError, Task, World};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid propensity model: {0}")]
    Invalid(String),
    #[error("no users to evaluate")]
    NoUsers,
}

/// Gaussian kernel on the action gap with a weight cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityModel {
    pub bandwidth: f64,
    pub cap: f64,
}

impl Default for PropensityModel {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            cap: 10.0,
        }
    }
}

impl PropensityModel {
    pub fn new(bandwidth: f64, cap: f64) -> Result<Self, EvalError> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(EvalError::Invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        if !(cap > 0.0) {
            return Err(EvalError::Invalid(format!("cap must be positive, got {cap}")));
        }
        Ok(Self { bandwidth, cap })
    }

    /// `-|pi(s) - a|^2 / (2 h^2)`
    pub fn log_kernel(&self, policy_action: &[f64], logged_action: &[f64]) -> f64 {
        let d2: f64 = policy_action
            .iter()
            .zip(logged_action)
            .map(|(p, a)| (p - a) * (p - a))
            .sum();
        -d2 / (2.0 * self.bandwidth * self.bandwidth)
    }

    /// `min(c, exp(log_kernel))`
    pub fn weight(&self, policy_action: &[f64], logged_action: &[f64]) -> f64 {
        self.log_kernel(policy_action, logged_action).exp().min(self.cap)
    }

    /// Log of the capped product of per-request weights.
    pub fn session_log_weight(&self, log_kernels: impl IntoIterator<Item = f64>) -> f64 {
        let capped_each = log_kernels.into_iter().map(|l| l.min(self.cap.ln()));
        capped_each.sum::<f64>().min(self.cap.ln())
    }
}

pub fn propensity(
    policy: &Actor,
    state: &[f64],
    action: &[f64],
    model: &PropensityModel,
) -> Result<f64, EvalError> {
    Ok(model.weight(&policy.act(state)?, action))
}

/// Per-user `sum_i w_i L_i / sum_i w_i` from log-weights, then the mean over
/// users. Users whose weights are all zero or non-finite are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct NcisOutcome {
    pub score: f64,
    pub per_user: Vec<f64>,
    pub skipped: usize,
}

pub fn ncis_from_log_weights(users: &[(Vec<f64>, Vec<f64>)]) -> Result<NcisOutcome, EvalError> {
    let mut per_user = Vec::with_capacity(users.len());
    let mut skipped = 0;
    for (log_w, levels) in users {
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            skipped += 1;
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (lw, l) in log_w.iter().zip(levels) {
            let w = (lw - max).exp();
            num += w * l;
            den += w;
        }
        if den > 0.0 && den.is_finite() {
            per_user.push(num / den);
        } else {
            skipped += 1;
        }
    }
    if per_user.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let score = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok(NcisOutcome {
        score,
        per_user,
        skipped,
    })
}

/// NCIS score of `policy` on logged held-out sessions for `task`.
pub fn ncis_score(
    policy: &Actor,
    users: &[HeldoutUser],
    task: Task,
    model: &PropensityModel,
) -> Result<NcisOutcome, EvalError> {
    ncis_score_with(|_, states| Ok(policy.act_batch(states)?), users, task, model)
}

/// Same as [`ncis_score`] for any map from a user's logged states (one per
/// row) to the actions the evaluated policy would take.
pub fn ncis_score_with<F>(
    act: F,
    users: &[HeldoutUser],
    task: Task,
    model: &PropensityModel,
) -> Result<NcisOutcome, EvalError>
where
    F: Fn(&HeldoutUser, &Matrix) -> Result<Matrix, EvalError> + Sync,
{
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = users
        .par_iter()
        .map(|u| -> Result<_, EvalError> {
            let states: Vec<&[f64]> = u.log.requests().map(|r| r.state.as_slice()).collect();
            let actions = act(u, &Matrix::from_rows(&states))?;
            let mut row = 0;
            let mut log_w = Vec::with_capacity(u.log.sessions.len());
            for s in &u.log.sessions {
                let lw = model.session_log_weight(s.requests.iter().map(|r| {
                    let k = model.log_kernel(actions.row(row), &r.action);
                    row += 1;
                    k
                }));
                log_w.push(lw);
            }
            let levels = u.levels.iter().map(|l| task.score(*l) as f64).collect();
            Ok((log_w, levels))
        })
        .collect::<Result<_, _>>()?;
    ncis_from_log_weights(&inputs)
}

/// Mean over users of the summed task levels of simulated sessions, with
/// levels taken relative to each user's logged averages.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeLevel {
    pub mean: f64,
    pub per_user: Vec<f64>,
}

pub fn cumulative_level<R>(
    recommender: &R,
    world: &World,
    users: &[HeldoutUser],
    task: Task,
    sessions: usize,
    seed: u64,
) -> Result<CumulativeLevel, EvalError>
where
    R: Recommender + Clone + Sync,
{
    if users.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let per_user: Vec<f64> = users
        .par_iter()
        .map(|u| -> Result<f64, EvalError> {
            let mut rec = recommender.clone();
            let mut rng = stream_rng(seed, streams::EVAL, u.profile.id);
            let log = world.simulate_user(&u.profile, &mut rec, sessions, &mut rng);
            let levels = session_levels(&log, &u.stats)?;
            Ok(levels.iter().map(|l| task.score(*l) as f64).sum())
        })
        .collect::<Result<_, _>>()?;
    let mean = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok(CumulativeLevel { mean, per_user })
}

/// Both metrics for one policy snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub ncis: f64,
    pub cum_level: f64,
}

/// Fixed evaluation setup reused across training intervals.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    pub world: &'a World,
    pub users: &'a [HeldoutUser],
    pub task: Task,
    pub sessions: usize,
    pub model: PropensityModel,
    pub seed: u64,
}

impl Evaluator<'_> {
    pub fn evaluate(&self, actor: &Actor) -> Result<EvalPoint, EvalError> {
        let ncis = ncis_score(actor, self.users, self.task, &self.model)?.score;
        let cum = cumulative_level(actor, self.world, self.users, self.task, self.sessions, self.seed)?;
        Ok(EvalPoint {
            ncis,
            cum_level: cum.mean,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub stderr: f64,
}

/// Cumulative level of each snapshot, averaged over `seeds`.
pub fn learning_curve(
    snapshots: &[(u64, Actor)],
    world: &World,
    users: &[HeldoutUser],
    task: Task,
    sessions: usize,
    seeds: &[u64],
) -> Result<Vec<CurvePoint>, EvalError> {
    snapshots
        .iter()
        .map(|(step, policy)| {
            let runs: Vec<f64> = seeds
                .iter()
                .map(|&s| Ok(cumulative_level(policy, world, users, task, sessions, s)?.mean))
                .collect::<Result<_, EvalError>>()?;
            let (mean, stderr) = mean_stderr(&runs);
            Ok(CurvePoint {
                step: *step,
                mean,
                stderr,
            })
        })
        .collect()
}

/// Mean and standard error (zero for fewer than two values).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `1.96` standard errors; `None` for fewer than two scores.
pub fn confidence_interval(scores: &[f64]) -> Option<f64> {
    if scores.len() < 2 {
        return None;
    }
    Some(1.96 * mean_stderr(scores).1)
}

/// One row of `eval.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub algo: String,
    pub task: Task,
    pub score: f64,
    pub ci95: f64,
    pub n_users: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "algo,task,score,ci95,n_users,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.algo, self.task, self.score, self.ci95, self.n_users, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let m = PropensityModel::default();
        assert_eq!(m.weight(&[0.3, 0.1], &[0.3, 0.1]), 1.0);
        assert!(m.weight(&[1e3], &[-1e3]) < 1e-300);
        let wide = PropensityModel::new(2.0, 10.0).unwrap();
        let lk = m.log_kernel(&[1.0, 0.0], &[0.0, 0.5]);
        assert!((wide.log_kernel(&[1.0, 0.0], &[0.0, 0.5]) - lk / 4.0).abs() < 1e-15);
        assert!(PropensityModel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn single_session_scores_its_level() {
        let out = ncis_from_log_weights(&[(vec![-3.7], vec![4.0])]).unwrap();
        assert_eq!(out.score, 4.0);
    }

    #[test]
    fn equal_weights_average() {
        let out = ncis_from_log_weights(&[(vec![-1.0, -1.0], vec![0.0, 4.0])]).unwrap();
        assert_eq!(out.score, 2.0);
    }

    #[test]
    fn underflowed_user_is_skipped() {
        let out = ncis_from_log_weights(&[
            (vec![f64::NEG_INFINITY], vec![3.0]),
            (vec![0.0], vec![1.0]),
        ])
        .unwrap();
        assert_eq!(out.skipped, 1);
        assert_eq!(out.score, 1.0);
    }

    #[test]
    fn interval_edge_cases() {
        assert_eq!(confidence_interval(&[1.0]), None);
        assert_eq!(confidence_interval(&[2.0, 2.0, 2.0]), Some(0.0));
        // sd of [1, 2, 3, 4] is sqrt(5/3)
        let ci = confidence_interval(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((ci - 1.96 * (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-12);
    }
}
