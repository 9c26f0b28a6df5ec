//! Offline dataset assembly: logging-policy simulation, the train/held-out
//! user split, replay transitions, teacher-labeled segment pairs, and the
//! held-out session file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::buffers::{
    PreferenceBuffer, PreferenceRecord, ReplayBuffer, TrajectorySegment,
};
use crate::rng::{stream_rng, streams};

use super::levels::{level_histogram, scripted_teacher, session_levels, session_stats};
use super::{
    BehaviorPolicy, EngagementLevels, Request, Session, SessionLog, SessionStats, SimError,
    SimParams, Task, UserProfile, World,
};

pub const HELDOUT_MAGIC: &str = "PREFREC-SES v1";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub users: usize,
    pub heldout_fraction: f64,
    pub sessions_per_user: usize,
    pub min_requests: usize,
    pub preference_pairs: usize,
    pub segment_length: usize,
    pub teacher_margin: f64,
    pub task: Task,
    pub params: SimParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            state_dim: 32,
            action_dim: 8,
            users: 1250,
            heldout_fraction: 0.2,
            sessions_per_user: 30,
            min_requests: 200,
            preference_pairs: 2000,
            segment_length: 100,
            teacher_margin: 0.0,
            task: Task::Mixture,
            params: SimParams::default(),
        }
    }
}

/// A user with their logged sessions and the levels of those sessions
/// relative to their own averages.
#[derive(Debug, Clone, PartialEq)]
pub struct HeldoutUser {
    pub profile: UserProfile,
    pub log: SessionLog,
    pub stats: SessionStats,
    pub levels: Vec<EngagementLevels>,
}

impl HeldoutUser {
    pub fn new(profile: UserProfile, log: SessionLog) -> Result<Self, SimError> {
        let stats = session_stats(&log)?;
        let levels = session_levels(&log, &stats)?;
        Ok(Self {
            profile,
            log,
            stats,
            levels,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub world: World,
    pub train: Vec<HeldoutUser>,
    pub heldout: Vec<HeldoutUser>,
    pub replay: ReplayBuffer,
    pub preferences: PreferenceBuffer,
}

impl Dataset {
    /// Fractions of all generated sessions at each level.
    pub fn level_histogram(&self) -> [(f64, f64); 6] {
        level_histogram(
            self.train
                .iter()
                .chain(&self.heldout)
                .flat_map(|u| u.levels.iter()),
        )
    }

    /// Segment pairs from training users labeled for `task`. The same
    /// `seed` picks the same segments whatever the task.
    pub fn sample_preferences(
        &self,
        task: Task,
        pairs: usize,
        seed: u64,
    ) -> Result<PreferenceBuffer, SimError> {
        let cfg = &self.config;
        let t = cfg.segment_length;
        let mut buf = PreferenceBuffer::new(cfg.state_dim, cfg.action_dim, t, pairs.max(1));
        if pairs == 0 {
            return Ok(buf);
        }
        if t == 0 {
            return Err(SimError::Infeasible("segment length must be positive".into()));
        }
        if t > cfg.min_requests {
            return Err(SimError::Infeasible(format!(
                "segment length {t} exceeds the minimum history of {} requests",
                cfg.min_requests
            )));
        }
        let eligible: Vec<&HeldoutUser> = self
            .train
            .iter()
            .filter(|u| u.log.num_requests() >= cfg.min_requests)
            .collect();
        if eligible.len() < 2 {
            return Err(SimError::Infeasible(format!(
                "{} training users have at least {} requests; two are needed",
                eligible.len(),
                cfg.min_requests
            )));
        }
        let mut records: Vec<PreferenceRecord> = (0..pairs)
            .into_par_iter()
            .map(|k| {
                let mut rng = stream_rng(seed, streams::PAIRS, k as u64);
                let i = rng.random_range(0..eligible.len());
                let mut j = rng.random_range(0..eligible.len() - 1);
                if j >= i {
                    j += 1;
                }
                let (s0, l0) = segment(eligible[i], t, task, &mut rng);
                let (s1, l1) = segment(eligible[j], t, task, &mut rng);
                PreferenceRecord {
                    first: s0,
                    second: s1,
                    label: scripted_teacher(&l0, &l1, cfg.teacher_margin),
                }
            })
            .collect();
        for r in records.drain(..) {
            buf.push(r)?;
        }
        Ok(buf)
    }
}

/// A random length-`t` window of the user's requests and, per request, the
/// task level of the session it belongs to.
fn segment(
    user: &HeldoutUser,
    t: usize,
    task: Task,
    rng: &mut crate::rng::Rng,
) -> (TrajectorySegment, Vec<u32>) {
    let n = user.log.num_requests();
    let start = rng.random_range(0..=n - t);
    let owner = user.log.session_of_request();
    let reqs: Vec<&Request> = user.log.requests().skip(start).take(t).collect();
    let ds = reqs[0].state.len();
    let da = reqs[0].action.len();
    let mut states = Vec::with_capacity(t * ds);
    let mut actions = Vec::with_capacity(t * da);
    for r in &reqs {
        states.extend_from_slice(&r.state);
        actions.extend_from_slice(&r.action);
    }
    let levels = owner[start..start + t]
        .iter()
        .map(|&s| task.score(user.levels[s]))
        .collect();
    let seg = TrajectorySegment::new(ds, da, states, actions).expect("simulator emits finite vectors");
    (seg, levels)
}

/// Simulates every user under the logging policy, splits users 80/20 (by
/// default), and assembles the replay and preference buffers.
pub fn generate_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset, SimError> {
    if config.users == 0 || config.sessions_per_user == 0 {
        return Err(SimError::Invalid("users and sessions_per_user must be positive".into()));
    }
    if !(0.0..1.0).contains(&config.heldout_fraction) {
        return Err(SimError::Invalid(format!(
            "heldout_fraction must lie in [0, 1), got {}",
            config.heldout_fraction
        )));
    }
    let world = World::new(
        config.state_dim,
        config.action_dim,
        config.params.clone(),
        &mut stream_rng(seed, streams::WORLD, 0),
    )?;

    let users: Vec<HeldoutUser> = (0..config.users as u64)
        .into_par_iter()
        .map(|id| {
            let profile = world.sample_user(id, &mut stream_rng(seed, streams::USER, id));
            let mut behavior = BehaviorPolicy::new(&world);
            let log = world.simulate_user(
                &profile,
                &mut behavior,
                config.sessions_per_user,
                &mut stream_rng(seed, streams::SIM, id),
            );
            HeldoutUser::new(profile, log)
        })
        .collect::<Result<_, _>>()?;

    let mut order: Vec<usize> = (0..users.len()).collect();
    order.shuffle(&mut stream_rng(seed, streams::SPLIT, 0));
    let n_heldout = (config.users as f64 * config.heldout_fraction).round() as usize;
    let mut is_heldout = vec![false; users.len()];
    for &i in &order[..n_heldout] {
        is_heldout[i] = true;
    }
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for (u, h) in users.into_iter().zip(is_heldout) {
        if h {
            heldout.push(u);
        } else {
            train.push(u);
        }
    }

    let total: usize = train.iter().map(|u| u.log.num_requests()).sum();
    let mut replay = ReplayBuffer::new(config.state_dim, config.action_dim, total);
    for u in &train {
        push_user(&mut replay, u)?;
    }

    let mut dataset = Dataset {
        config: config.clone(),
        world,
        train,
        heldout,
        replay,
        preferences: PreferenceBuffer::new(config.state_dim, config.action_dim, config.segment_length, 1),
    };
    dataset.preferences =
        dataset.sample_preferences(config.task, config.preference_pairs, seed)?;
    Ok(dataset)
}

fn push_user(replay: &mut ReplayBuffer, user: &HeldoutUser) -> Result<(), SimError> {
    let log = &user.log;
    let flat: Vec<(u32, u32, &Request)> = log
        .sessions
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.requests
                .iter()
                .enumerate()
                .map(move |(ri, r)| (si as u32, ri as u32, r))
        })
        .collect();
    for (k, (si, ri, r)) in flat.iter().enumerate() {
        let next = flat.get(k + 1).map_or(&log.final_state, |n| &n.2.state);
        replay.push_parts(&r.state, &r.action, next, (user.profile.id, *si, *ri))?;
    }
    Ok(())
}

/// `level,depth_fraction,frequency_fraction`
pub fn write_levels_csv(path: impl AsRef<Path>, histogram: &[(f64, f64); 6]) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "level,depth_fraction,frequency_fraction")?;
    for (k, (d, f)) in histogram.iter().enumerate() {
        writeln!(w, "{k},{d},{f}")?;
    }
    w.flush()?;
    Ok(())
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&v.to_string());
    }
    s
}

/// Writes the world and the held-out users.
///
/// ```text
/// PREFREC-SES v1 d_s=<int> d_a=<int> users=<int>
/// W <mixing matrix, row-major>
/// G <popularity direction>
/// T <taste direction>
/// U id,baseline_engagement,<preference>,<static features>
/// S start,exit,engagement
/// R time,<state>,<action>
/// X return_time,<state at return>
/// ```
pub fn write_heldout(
    path: impl AsRef<Path>,
    world: &World,
    users: &[HeldoutUser],
) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{HELDOUT_MAGIC} d_s={} d_a={} users={}",
        world.state_dim,
        world.action_dim,
        users.len()
    )?;
    writeln!(w, "W {}", join(&world.mixing))?;
    writeln!(w, "G {}", join(&world.popularity))?;
    writeln!(w, "T {}", join(&world.taste))?;
    for u in users {
        let p = &u.profile;
        writeln!(
            w,
            "U {},{},{},{}",
            p.id,
            p.engagement,
            join(&p.preference),
            join(&p.static_features)
        )?;
        for (s, e) in u.log.sessions.iter().zip(&u.log.engagement) {
            writeln!(w, "S {},{},{}", s.start, s.exit, e)?;
            for r in &s.requests {
                writeln!(w, "R {},{},{}", r.time, join(&r.state), join(&r.action))?;
            }
        }
        let ret = u.log.return_time.map_or("none".to_string(), |t| t.to_string());
        writeln!(w, "X {},{}", ret, join(&u.log.final_state))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a held-out file; `params` supplies the dynamics constants.
pub fn read_heldout(
    path: impl AsRef<Path>,
    params: SimParams,
) -> Result<(World, Vec<HeldoutUser>), SimError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
    let parse_err = |line: usize, message: String| SimError::Parse { line, message };

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let header = header?;
    let rest = header
        .strip_prefix(HELDOUT_MAGIC)
        .ok_or_else(|| parse_err(1, format!("expected `{HELDOUT_MAGIC}` header")))?;
    let mut dims = [0usize; 3];
    for (slot, (tok, key)) in dims
        .iter_mut()
        .zip(rest.split_whitespace().zip(["d_s", "d_a", "users"]))
    {
        let v = tok
            .strip_prefix(key)
            .and_then(|t| t.strip_prefix('='))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(1, format!("bad header field `{tok}`")))?;
        *slot = v;
    }
    let [ds, da, n_users] = dims;

    let mut world = World {
        state_dim: ds,
        action_dim: da,
        mixing: Vec::new(),
        popularity: Vec::new(),
        taste: Vec::new(),
        params,
    };
    let mut users: Vec<HeldoutUser> = Vec::with_capacity(n_users);
    let mut current: Option<(UserProfile, SessionLog)> = None;

    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (tag, body) = line
            .split_once(' ')
            .ok_or_else(|| parse_err(lineno, "missing record tag".into()))?;
        let fields: Vec<&str> = body.split(',').collect();
        let floats = |fs: &[&str]| -> Result<Vec<f64>, SimError> {
            fs.iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(lineno, format!("bad number `{f}`")))
                })
                .collect()
        };
        let expect = |n: usize| -> Result<(), SimError> {
            if fields.len() == n {
                Ok(())
            } else {
                Err(parse_err(
                    lineno,
                    format!("expected {n} fields, found {}", fields.len()),
                ))
            }
        };
        match tag {
            "W" => world.mixing = floats(&fields)?,
            "G" => {
                expect(da)?;
                world.popularity = floats(&fields)?;
            }
            "T" => {
                expect(da)?;
                world.taste = floats(&fields)?;
            }
            "U" => {
                if let Some((p, log)) = current.take() {
                    users.push(HeldoutUser::new(p, log)?);
                }
                expect(2 + da + ds - super::DYNAMIC_FEATURES)?;
                let id = fields[0]
                    .parse::<u64>()
                    .map_err(|_| parse_err(lineno, format!("bad id `{}`", fields[0])))?;
                let v = floats(&fields[1..])?;
                current = Some((
                    UserProfile {
                        id,
                        engagement: v[0],
                        preference: v[1..1 + da].to_vec(),
                        static_features: v[1 + da..].to_vec(),
                    },
                    SessionLog {
                        sessions: Vec::new(),
                        return_time: None,
                        final_state: Vec::new(),
                        engagement: Vec::new(),
                    },
                ));
            }
            "S" => {
                expect(3)?;
                let v = floats(&fields)?;
                let (_, log) = current
                    .as_mut()
                    .ok_or_else(|| parse_err(lineno, "session before user".into()))?;
                log.sessions.push(Session {
                    start: v[0],
                    exit: v[1],
                    requests: Vec::new(),
                });
                log.engagement.push(v[2]);
            }
            "R" => {
                expect(1 + ds + da)?;
                let v = floats(&fields)?;
                let session = current
                    .as_mut()
                    .and_then(|(_, log)| log.sessions.last_mut())
                    .ok_or_else(|| parse_err(lineno, "request before session".into()))?;
                session.requests.push(Request {
                    time: v[0],
                    state: v[1..1 + ds].to_vec(),
                    action: v[1 + ds..].to_vec(),
                });
            }
            "X" => {
                expect(1 + ds)?;
                let (_, log) = current
                    .as_mut()
                    .ok_or_else(|| parse_err(lineno, "return before user".into()))?;
                log.return_time = if fields[0] == "none" {
                    None
                } else {
                    Some(floats(&fields[..1])?[0])
                };
                log.final_state = floats(&fields[1..])?;
            }
            other => return Err(parse_err(lineno, format!("unknown record tag `{other}`"))),
        }
    }
    if let Some((p, log)) = current.take() {
        users.push(HeldoutUser::new(p, log)?);
    }
    if users.len() != n_users {
        return Err(parse_err(
            0,
            format!("header promises {n_users} users, found {}", users.len()),
        ));
    }
    if world.mixing.len() % da.max(1) != 0 || world.popularity.len() != da || world.taste.len() != da {
        return Err(parse_err(0, "world record missing or malformed".into()));
    }
    Ok((world, users))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            state_dim: 16,
            action_dim: 4,
            users: 20,
            sessions_per_user: 12,
            min_requests: 40,
            preference_pairs: 30,
            segment_length: 20,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn counts_match_config() {
        let d = generate_dataset(&small(), 5).unwrap();
        assert_eq!(d.heldout.len(), 4);
        assert_eq!(d.train.len(), 16);
        assert_eq!(d.preferences.len(), 30);
        let total: usize = d.train.iter().map(|u| u.log.num_requests()).sum();
        assert_eq!(d.replay.len(), total);
    }

    #[test]
    fn zero_pairs_give_empty_buffer() {
        let cfg = DatasetConfig {
            preference_pairs: 0,
            ..small()
        };
        assert!(generate_dataset(&cfg, 1).unwrap().preferences.is_empty());
    }

    #[test]
    fn overlong_segments_are_infeasible() {
        let cfg = DatasetConfig {
            segment_length: 41,
            ..small()
        };
        assert!(matches!(
            generate_dataset(&cfg, 1),
            Err(SimError::Infeasible(_))
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(), 9).unwrap();
        let b = generate_dataset(&small(), 9).unwrap();
        assert_eq!(a.replay, b.replay);
        assert_eq!(a.preferences, b.preferences);
        assert_eq!(a.heldout, b.heldout);
    }

    #[test]
    fn heldout_file_round_trip() {
        let d = generate_dataset(&small(), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heldout.ses");
        write_heldout(&path, &d.world, &d.heldout).unwrap();
        let (world, users) = read_heldout(&path, d.world.params.clone()).unwrap();
        assert_eq!(world, d.world);
        assert_eq!(users, d.heldout);
    }
}
