//! Session statistics, six-level engagement quantization, and the scripted
//! teacher.

use std::fmt;
use std::str::FromStr;

use crate::buffers::Preference;

use super::{SessionLog, SimError};

pub const MAX_LEVEL: u32 = 5;

/// Which engagement signal a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Depth,
    Frequency,
    Mixture,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Depth, Task::Frequency, Task::Mixture];

    pub fn score(self, levels: EngagementLevels) -> u32 {
        match self {
            Task::Depth => levels.depth,
            Task::Frequency => levels.frequency,
            Task::Mixture => levels.depth + levels.frequency,
        }
    }

    /// Largest score one session can reach.
    pub fn max_score(self) -> u32 {
        match self {
            Task::Mixture => 2 * MAX_LEVEL,
            _ => MAX_LEVEL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Depth => "depth",
            Task::Frequency => "frequency",
            Task::Mixture => "mixture",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "depth" => Ok(Task::Depth),
            "frequency" => Ok(Task::Frequency),
            "mixture" => Ok(Task::Mixture),
            other => Err(SimError::Invalid(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    Depth,
    Frequency,
}

/// Per-session depth and frequency levels, each in `0..=5`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngagementLevels {
    pub depth: u32,
    pub frequency: u32,
}

/// Per-session depths and revisit intervals of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionStats {
    pub depths: Vec<f64>,
    /// Exit-to-next-start interval in seconds; `None` when no later visit
    /// is known.
    pub gaps: Vec<Option<f64>>,
    pub depth_avg: f64,
    /// `None` flags that no session has a successor visit.
    pub gap_avg: Option<f64>,
}

impl SessionStats {
    pub fn gap_undefined(&self) -> bool {
        self.gap_avg.is_none()
    }
}

pub fn session_stats(log: &SessionLog) -> Result<SessionStats, SimError> {
    if log.sessions.is_empty() {
        return Err(SimError::Invalid("log has no sessions".into()));
    }
    let depths: Vec<f64> = log.sessions.iter().map(|s| s.depth() as f64).collect();
    let mut gaps = Vec::with_capacity(depths.len());
    for (i, s) in log.sessions.iter().enumerate() {
        let next = log
            .sessions
            .get(i + 1)
            .map(|n| n.start)
            .or(log.return_time);
        gaps.push(next.map(|t| t - s.exit));
    }
    let depth_avg = depths.iter().sum::<f64>() / depths.len() as f64;
    let defined: Vec<f64> = gaps.iter().flatten().copied().collect();
    let gap_avg = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(SessionStats {
        depths,
        gaps,
        depth_avg,
        gap_avg,
    })
}

/// `clip(floor(x_i / x_avg), 0, 5)` for depth and
/// `clip(floor(x_avg / x_i), 0, 5)` for frequency.
pub fn engagement_level(x_i: f64, x_avg: f64, kind: LevelKind) -> Result<u32, SimError> {
    let ratio = match kind {
        LevelKind::Depth => {
            if !(x_avg > 0.0) {
                return Err(SimError::Invalid(format!(
                    "average depth must be positive, got {x_avg}"
                )));
            }
            x_i / x_avg
        }
        LevelKind::Frequency => {
            if !(x_i > 0.0) {
                return Err(SimError::Invalid(format!(
                    "revisit interval must be positive, got {x_i}"
                )));
            }
            x_avg / x_i
        }
    };
    if ratio.is_nan() {
        return Err(SimError::Invalid("level ratio is NaN".into()));
    }
    Ok(ratio.floor().clamp(0.0, MAX_LEVEL as f64) as u32)
}

/// Levels of every session in `log` relative to `reference` averages.
/// Sessions without a known revisit interval get frequency level 0.
pub fn session_levels(
    log: &SessionLog,
    reference: &SessionStats,
) -> Result<Vec<EngagementLevels>, SimError> {
    let stats = session_stats(log)?;
    stats
        .depths
        .iter()
        .zip(&stats.gaps)
        .map(|(&d, gap)| {
            let depth = engagement_level(d, reference.depth_avg, LevelKind::Depth)?;
            let frequency = match (gap, reference.gap_avg) {
                (Some(g), Some(avg)) => engagement_level(*g, avg, LevelKind::Frequency)?,
                _ => 0,
            };
            Ok(EngagementLevels { depth, frequency })
        })
        .collect()
}

/// Labels a segment pair by comparing the summed levels of each segment.
pub fn scripted_teacher(levels0: &[u32], levels1: &[u32], margin: f64) -> Preference {
    let s0: f64 = levels0.iter().map(|&l| l as f64).sum();
    let s1: f64 = levels1.iter().map(|&l| l as f64).sum();
    if s1 > s0 + margin {
        Preference::Second
    } else if s0 > s1 + margin {
        Preference::First
    } else {
        Preference::Equal
    }
}

/// Fractions of sessions at each level, for the level histogram.
pub fn level_histogram<'a>(
    levels: impl IntoIterator<Item = &'a EngagementLevels>,
) -> [(f64, f64); 6] {
    let mut depth = [0usize; 6];
    let mut freq = [0usize; 6];
    let mut n = 0usize;
    for l in levels {
        depth[l.depth as usize] += 1;
        freq[l.frequency as usize] += 1;
        n += 1;
    }
    let mut out = [(0.0, 0.0); 6];
    if n > 0 {
        for k in 0..6 {
            out[k] = (depth[k] as f64 / n as f64, freq[k] as f64 / n as f64);
        }
    }
    out
}
