//! The replay buffer of reward-free transitions and the preference buffer of
//! labeled segment pairs, with seeded uniform sampling and text file I/O.
//!
//! Transition file:
//!
//! ```text
//! PREFREC-TRN v1 d_s=<int> d_a=<int>
//! user_id,session_index,request_index,<d_s floats>,<d_a floats>,<d_s floats>
//! ```
//!
//! Preference file:
//!
//! ```text
//! PREFREC-PRF v1 d_s=<int> d_a=<int> T=<int>
//! T lines of `<d_s floats>,<d_a floats>` for the first segment
//! T lines of the same for the second segment
//! y0,y1
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::nn::Matrix;

pub const TRANSITION_MAGIC: &str = "PREFREC-TRN v1";
pub const PREFERENCE_MAGIC: &str = "PREFREC-PRF v1";

/// Table-1 capacities.
pub const DEFAULT_REPLAY_CAPACITY: usize = 3_000_000;
pub const DEFAULT_PREFERENCE_CAPACITY: usize = 20_000;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error("buffer i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: expected {expected} values, found {actual}")]
    Dimension {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{what}: expected dimension {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("buffer is full (capacity {0})")]
    Full(usize),
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("invalid preference label ({0}, {1})")]
    InvalidLabel(f64, f64),
}

/// One recommendation request. There is deliberately no reward field.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub user_id: u64,
    pub session_index: u32,
    pub request_index: u32,
}

/// Borrowed view of a stored transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRef<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub next_state: &'a [f64],
    pub user_id: u64,
    pub session_index: u32,
    pub request_index: u32,
}

impl TransitionRef<'_> {
    pub fn to_owned(&self) -> Transition {
        Transition {
            state: self.state.to_vec(),
            action: self.action.to_vec(),
            next_state: self.next_state.to_vec(),
            user_id: self.user_id,
            session_index: self.session_index,
            request_index: self.request_index,
        }
    }
}

/// A sampled mini-batch, one transition per row.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub states: Matrix,
    pub actions: Matrix,
    pub next_states: Matrix,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` indices drawn uniformly with replacement from `0..len`.
pub fn sample_indices<R: Rng + ?Sized>(
    len: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, BufferError> {
    if len == 0 {
        return Err(BufferError::Empty);
    }
    Ok((0..n).map(|_| rng.random_range(0..len)).collect())
}

/// Reward-free transitions `(s, a, s')`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    state_dim: usize,
    action_dim: usize,
    capacity: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    next_states: Vec<f64>,
    meta: Vec<(u64, u32, u32)>,
}

impl ReplayBuffer {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            capacity,
            states: Vec::new(),
            actions: Vec::new(),
            next_states: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Appends a transition. Overflow is an error; nothing is evicted.
    pub fn push(&mut self, t: Transition) -> Result<(), BufferError> {
        self.push_parts(
            &t.state,
            &t.action,
            &t.next_state,
            (t.user_id, t.session_index, t.request_index),
        )
    }

    pub fn push_parts(
        &mut self,
        state: &[f64],
        action: &[f64],
        next_state: &[f64],
        meta: (u64, u32, u32),
    ) -> Result<(), BufferError> {
        if self.len() >= self.capacity {
            return Err(BufferError::Full(self.capacity));
        }
        check_dim("state", self.state_dim, state)?;
        check_dim("action", self.action_dim, action)?;
        check_dim("next state", self.state_dim, next_state)?;
        self.states.extend_from_slice(state);
        self.actions.extend_from_slice(action);
        self.next_states.extend_from_slice(next_state);
        self.meta.push(meta);
        Ok(())
    }

    pub fn get(&self, i: usize) -> TransitionRef<'_> {
        let (ds, da) = (self.state_dim, self.action_dim);
        let (user_id, session_index, request_index) = self.meta[i];
        TransitionRef {
            state: &self.states[i * ds..(i + 1) * ds],
            action: &self.actions[i * da..(i + 1) * da],
            next_state: &self.next_states[i * ds..(i + 1) * ds],
            user_id,
            session_index,
            request_index,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TransitionRef<'_>> {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn batch(&self, indices: &[usize]) -> TransitionBatch {
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut states = Vec::with_capacity(indices.len() * ds);
        let mut actions = Vec::with_capacity(indices.len() * da);
        let mut next_states = Vec::with_capacity(indices.len() * ds);
        for &i in indices {
            states.extend_from_slice(&self.states[i * ds..(i + 1) * ds]);
            actions.extend_from_slice(&self.actions[i * da..(i + 1) * da]);
            next_states.extend_from_slice(&self.next_states[i * ds..(i + 1) * ds]);
        }
        let n = indices.len();
        TransitionBatch {
            states: Matrix::from_vec(n, ds, states),
            actions: Matrix::from_vec(n, da, actions),
            next_states: Matrix::from_vec(n, ds, next_states),
        }
    }

    /// Uniform sample of `n` transitions with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<TransitionBatch, BufferError> {
        let idx = sample_indices(self.len(), n, rng)?;
        Ok(self.batch(&idx))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), BufferError> {
        writeln!(
            w,
            "{TRANSITION_MAGIC} d_s={} d_a={}",
            self.state_dim, self.action_dim
        )?;
        let mut line = String::new();
        for t in self.iter() {
            line.clear();
            use std::fmt::Write as _;
            let _ = write!(line, "{},{},{}", t.user_id, t.session_index, t.request_index);
            for v in t.state.iter().chain(t.action).chain(t.next_state) {
                let _ = write!(line, ",{v}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, capacity: usize) -> Result<Self, BufferError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.ok_or(BufferError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let dims = parse_header(&header, TRANSITION_MAGIC, &["d_s", "d_a"], 1)?;
        let (ds, da) = (dims[0], dims[1]);
        let mut buf = ReplayBuffer::new(ds, da, capacity);
        let expected = 3 + 2 * ds + da;
        for (k, line) in lines.enumerate() {
            let lineno = k + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected {
                return Err(BufferError::Dimension {
                    line: lineno,
                    expected,
                    actual: fields.len(),
                });
            }
            let user_id = parse_int::<u64>(fields[0], lineno)?;
            let session = parse_int::<u32>(fields[1], lineno)?;
            let request = parse_int::<u32>(fields[2], lineno)?;
            let values = parse_floats(&fields[3..], lineno)?;
            buf.push_parts(
                &values[..ds],
                &values[ds..ds + da],
                &values[ds + da..],
                (user_id, session, request),
            )
            .map_err(|e| BufferError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
        }
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BufferError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Reads a transition file into a buffer with the default capacity.
pub fn load_transitions(path: impl AsRef<Path>) -> Result<ReplayBuffer, BufferError> {
    ReplayBuffer::read_from(BufReader::new(File::open(path)?), DEFAULT_REPLAY_CAPACITY)
}

/// Reads a preference file into a buffer with the default capacity.
pub fn load_preferences(path: impl AsRef<Path>) -> Result<PreferenceBuffer, BufferError> {
    PreferenceBuffer::read_from(BufReader::new(File::open(path)?), DEFAULT_PREFERENCE_CAPACITY)
}

/// A window of consecutive `(state, action)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
}

impl TrajectorySegment {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
    ) -> Result<Self, BufferError> {
        if state_dim == 0 || states.len() % state_dim != 0 {
            return Err(BufferError::Shape {
                what: "segment states",
                expected: state_dim,
                actual: states.len(),
            });
        }
        let len = states.len() / state_dim;
        if actions.len() != len * action_dim {
            return Err(BufferError::Shape {
                what: "segment actions",
                expected: len * action_dim,
                actual: actions.len(),
            });
        }
        if len == 0 {
            return Err(BufferError::Empty);
        }
        if !states.iter().chain(&actions).all(|v| v.is_finite()) {
            return Err(BufferError::NonFinite("segment"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
        })
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self, BufferError> {
        let ds = pairs.first().map_or(0, |p| p.0.len());
        let da = pairs.first().map_or(0, |p| p.1.len());
        let states = pairs.iter().flat_map(|p| p.0.iter().copied()).collect();
        let actions = pairs.iter().flat_map(|p| p.1.iter().copied()).collect();
        Self::new(ds, da, states, actions)
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Appends `[s_t; a_t]` rows to `out`.
    pub fn extend_inputs(&self, out: &mut Vec<f64>) {
        for t in 0..self.len() {
            out.extend_from_slice(self.state(t));
            out.extend_from_slice(self.action(t));
        }
    }

    /// `T x (d_s + d_a)` matrix of concatenated `[s_t; a_t]`.
    pub fn inputs(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * (self.state_dim + self.action_dim));
        self.extend_inputs(&mut data);
        Matrix::from_vec(self.len(), self.state_dim + self.action_dim, data)
    }
}

/// Teacher feedback on a segment pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preference {
    /// `y = (1, 0)`: the first segment is preferred.
    First,
    /// `y = (0, 1)`: the second segment is preferred.
    Second,
    /// `y = (0.5, 0.5)`.
    Equal,
}

impl Preference {
    pub fn as_pair(self) -> (f64, f64) {
        match self {
            Preference::First => (1.0, 0.0),
            Preference::Second => (0.0, 1.0),
            Preference::Equal => (0.5, 0.5),
        }
    }

    pub fn from_pair(y0: f64, y1: f64) -> Result<Self, BufferError> {
        match (y0, y1) {
            (a, b) if a == 1.0 && b == 0.0 => Ok(Preference::First),
            (a, b) if a == 0.0 && b == 1.0 => Ok(Preference::Second),
            (a, b) if a == 0.5 && b == 0.5 => Ok(Preference::Equal),
            _ => Err(BufferError::InvalidLabel(y0, y1)),
        }
    }

    /// The label after swapping the two segments.
    pub fn mirrored(self) -> Self {
        match self {
            Preference::First => Preference::Second,
            Preference::Second => Preference::First,
            Preference::Equal => Preference::Equal,
        }
    }
}

/// `(sigma_0, sigma_1, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceRecord {
    pub first: TrajectorySegment,
    pub second: TrajectorySegment,
    pub label: Preference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceBuffer {
    state_dim: usize,
    action_dim: usize,
    segment_len: usize,
    capacity: usize,
    records: Vec<PreferenceRecord>,
}

impl PreferenceBuffer {
    pub fn new(state_dim: usize, action_dim: usize, segment_len: usize, capacity: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            segment_len,
            capacity,
            records: Vec::new(),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn push(&mut self, record: PreferenceRecord) -> Result<(), BufferError> {
        if self.len() >= self.capacity {
            return Err(BufferError::Full(self.capacity));
        }
        for seg in [&record.first, &record.second] {
            if seg.state_dim() != self.state_dim {
                return Err(BufferError::Shape {
                    what: "segment state",
                    expected: self.state_dim,
                    actual: seg.state_dim(),
                });
            }
            if seg.action_dim() != self.action_dim {
                return Err(BufferError::Shape {
                    what: "segment action",
                    expected: self.action_dim,
                    actual: seg.action_dim(),
                });
            }
            if seg.len() != self.segment_len {
                return Err(BufferError::Shape {
                    what: "segment length",
                    expected: self.segment_len,
                    actual: seg.len(),
                });
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Uniform sample of `n` records with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&PreferenceRecord>, BufferError> {
        let idx = sample_indices(self.len(), n, rng)?;
        Ok(idx.into_iter().map(|i| &self.records[i]).collect())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), BufferError> {
        writeln!(
            w,
            "{PREFERENCE_MAGIC} d_s={} d_a={} T={}",
            self.state_dim, self.action_dim, self.segment_len
        )?;
        let mut line = String::new();
        for rec in &self.records {
            for seg in [&rec.first, &rec.second] {
                for t in 0..seg.len() {
                    line.clear();
                    use std::fmt::Write as _;
                    for (k, v) in seg.state(t).iter().chain(seg.action(t)).enumerate() {
                        if k > 0 {
                            line.push(',');
                        }
                        let _ = write!(line, "{v}");
                    }
                    writeln!(w, "{line}")?;
                }
            }
            let (y0, y1) = rec.label.as_pair();
            writeln!(w, "{y0},{y1}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R, capacity: usize) -> Result<Self, BufferError> {
        let mut lines = r.lines().enumerate().map(|(k, l)| (k + 1, l));
        let (_, header) = lines.next().ok_or(BufferError::Malformed {
            line: 1,
            message: "missing header".into(),
        })?;
        let dims = parse_header(&header?, PREFERENCE_MAGIC, &["d_s", "d_a", "T"], 1)?;
        let (ds, da, seg_len) = (dims[0], dims[1], dims[2]);
        let mut buf = PreferenceBuffer::new(ds, da, seg_len, capacity);
        let mut body = lines.filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));

        loop {
            let mut segments = Vec::with_capacity(2);
            for part in 0..2 {
                let mut states = Vec::with_capacity(seg_len * ds);
                let mut actions = Vec::with_capacity(seg_len * da);
                for t in 0..seg_len {
                    let Some((lineno, line)) = body.next() else {
                        if part == 0 && t == 0 {
                            return Ok(buf);
                        }
                        return Err(BufferError::Malformed {
                            line: 0,
                            message: "file ends inside a preference record".into(),
                        });
                    };
                    let line = line?;
                    let fields: Vec<&str> = line.split(',').collect();
                    if fields.len() != ds + da {
                        return Err(BufferError::Dimension {
                            line: lineno,
                            expected: ds + da,
                            actual: fields.len(),
                        });
                    }
                    let values = parse_floats(&fields, lineno)?;
                    states.extend_from_slice(&values[..ds]);
                    actions.extend_from_slice(&values[ds..]);
                }
                if seg_len == 0 {
                    return Ok(buf);
                }
                segments.push(TrajectorySegment::new(ds, da, states, actions)?);
            }
            let (lineno, line) = body.next().ok_or(BufferError::Malformed {
                line: 0,
                message: "missing label line".into(),
            })?;
            let line = line?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 {
                return Err(BufferError::Dimension {
                    line: lineno,
                    expected: 2,
                    actual: fields.len(),
                });
            }
            let y = parse_floats(&fields, lineno)?;
            let label = Preference::from_pair(y[0], y[1]).map_err(|e| BufferError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            let second = segments.pop().expect("two segments");
            let first = segments.pop().expect("two segments");
            buf.push(PreferenceRecord {
                first,
                second,
                label,
            })
            .map_err(|e| BufferError::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BufferError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn check_dim(what: &'static str, expected: usize, v: &[f64]) -> Result<(), BufferError> {
    if v.len() != expected {
        return Err(BufferError::Shape {
            what,
            expected,
            actual: v.len(),
        });
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(BufferError::NonFinite(what));
    }
    Ok(())
}

/// Parses `MAGIC k1=v1 k2=v2 ...`; bare integers in key order are accepted too.
fn parse_header(
    line: &str,
    magic: &str,
    keys: &[&str],
    lineno: usize,
) -> Result<Vec<usize>, BufferError> {
    let bad = |message: String| BufferError::Malformed {
        line: lineno,
        message,
    };
    let rest = line
        .strip_prefix(magic)
        .ok_or_else(|| bad(format!("expected header starting with `{magic}`")))?;
    let tokens: Vec<&str> = rest.split_whitespace().collect();
    if tokens.len() != keys.len() {
        return Err(bad(format!("header needs {} fields", keys.len())));
    }
    tokens
        .iter()
        .zip(keys)
        .map(|(tok, key)| {
            let value = match tok.split_once('=') {
                Some((k, v)) if k == *key => v,
                Some((k, _)) => return Err(bad(format!("expected `{key}=`, found `{k}=`"))),
                None => tok,
            };
            value
                .parse::<usize>()
                .map_err(|_| bad(format!("bad value for {key}: `{value}`")))
        })
        .collect()
}

fn parse_int<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, BufferError> {
    s.trim().parse().map_err(|_| BufferError::Malformed {
        line,
        message: format!("bad integer `{s}`"),
    })
}

fn parse_floats(fields: &[&str], line: usize) -> Result<Vec<f64>, BufferError> {
    fields
        .iter()
        .map(|f| {
            let v: f64 = f.trim().parse().map_err(|_| BufferError::Malformed {
                line,
                message: format!("bad number `{f}`"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(BufferError::Malformed {
                    line,
                    message: format!("non-finite value `{f}`"),
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_transition(rng: &mut crate::rng::Rng, ds: usize, da: usize, i: u32) -> Transition {
        let mut v = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| StandardNormal.sample(&mut *rng))
                .collect::<Vec<f64>>()
        };
        Transition {
            state: v(ds),
            action: v(da),
            next_state: v(ds),
            user_id: (i / 7) as u64,
            session_index: i % 7,
            request_index: i,
        }
    }

    #[test]
    fn empty_body_loads_as_empty_buffer() {
        let text = "PREFREC-TRN v1 d_s=3 d_a=2\n";
        let buf = ReplayBuffer::read_from(text.as_bytes(), 10).unwrap();
        assert!(buf.is_empty());
        assert_eq!((buf.state_dim(), buf.action_dim()), (3, 2));

        let text = "PREFREC-PRF v1 d_s=3 d_a=2 T=4\n";
        let buf = PreferenceBuffer::read_from(text.as_bytes(), 10).unwrap();
        assert!(buf.is_empty());
    }

    #[test]
    fn transition_round_trip_is_bitwise() {
        let mut rng = stream_rng(7, 0, 0);
        let mut buf = ReplayBuffer::new(5, 3, 2000);
        for i in 0..1000 {
            buf.push(random_transition(&mut rng, 5, 3, i)).unwrap();
        }
        let mut bytes = Vec::new();
        buf.write_to(&mut bytes).unwrap();
        let back = ReplayBuffer::read_from(&bytes[..], 2000).unwrap();
        assert_eq!(back.len(), 1000);
        for (a, b) in buf.iter().zip(back.iter()) {
            assert_eq!(a.user_id, b.user_id);
            assert_eq!(a.request_index, b.request_index);
            for (x, y) in a.state.iter().chain(a.action).chain(a.next_state).zip(
                b.state.iter().chain(b.action).chain(b.next_state),
            ) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn wrong_width_record_is_rejected_with_line() {
        let mut text = String::from("PREFREC-TRN v1 d_s=2 d_a=1\n");
        text.push_str("0,0,0,1,2,3,4,5\n");
        text.push_str("0,0,1,1,2,3,4\n");
        let err = ReplayBuffer::read_from(text.as_bytes(), 10).unwrap_err();
        match err {
            BufferError::Dimension { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn garbage_number_reports_line() {
        let text = "PREFREC-TRN v1 d_s=1 d_a=1\n0,0,0,1,x,3\n";
        let err = ReplayBuffer::read_from(text.as_bytes(), 10).unwrap_err();
        assert!(err.to_string().starts_with("line 2"), "{err}");
    }

    #[test]
    fn overflow_is_an_error() {
        let mut buf = ReplayBuffer::new(1, 1, 1);
        let t = Transition {
            state: vec![0.0],
            action: vec![0.0],
            next_state: vec![0.0],
            user_id: 0,
            session_index: 0,
            request_index: 0,
        };
        buf.push(t.clone()).unwrap();
        assert!(matches!(buf.push(t), Err(BufferError::Full(1))));
    }

    #[test]
    fn single_item_is_sampled_repeatedly() {
        let mut buf = ReplayBuffer::new(1, 1, 4);
        buf.push_parts(&[2.0], &[3.0], &[4.0], (0, 0, 0)).unwrap();
        let batch = buf.sample_batch(3, &mut stream_rng(0, 0, 0)).unwrap();
        assert_eq!(batch.states.as_slice(), &[2.0, 2.0, 2.0]);
        assert_eq!(batch.actions.as_slice(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_indices(50, 20, &mut stream_rng(3, 1, 1)).unwrap();
        let b = sample_indices(50, 20, &mut stream_rng(3, 1, 1)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            sample_indices(0, 1, &mut stream_rng(0, 0, 0)),
            Err(BufferError::Empty)
        ));
    }

    #[test]
    fn sampling_is_uniform() {
        // Each of 10 items has p = 0.1; with n = 1e5 the binomial sd is ~95.
        let n = 100_000;
        let idx = sample_indices(10, n, &mut stream_rng(11, 0, 0)).unwrap();
        let mut counts = [0usize; 10];
        for i in idx {
            counts[i] += 1;
        }
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.1).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn preference_round_trip() {
        let mut rng = stream_rng(2, 0, 0);
        let mut buf = PreferenceBuffer::new(2, 1, 3, 10);
        for label in [Preference::First, Preference::Second, Preference::Equal] {
            let mut seg = || {
                let s: Vec<f64> = (0..6).map(|_| StandardNormal.sample(&mut rng)).collect();
                let a: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                TrajectorySegment::new(2, 1, s, a).unwrap()
            };
            let (first, second) = (seg(), seg());
            buf.push(PreferenceRecord {
                first,
                second,
                label,
            })
            .unwrap();
        }
        let mut bytes = Vec::new();
        buf.write_to(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"PREFREC-PRF v1 d_s=2 d_a=1 T=3\n"));
        let back = PreferenceBuffer::read_from(&bytes[..], 10).unwrap();
        assert_eq!(back, buf);
    }

    #[test]
    fn invalid_label_is_rejected() {
        let text = "PREFREC-PRF v1 d_s=1 d_a=1 T=1\n0,0\n1,1\n0.3,0.7\n";
        let err = PreferenceBuffer::read_from(text.as_bytes(), 10).unwrap_err();
        assert!(err.to_string().starts_with("line 4"), "{err}");
    }

    #[test]
    fn segment_length_must_match_buffer() {
        let mut buf = PreferenceBuffer::new(1, 1, 2, 10);
        let seg = TrajectorySegment::new(1, 1, vec![0.0], vec![0.0]).unwrap();
        let err = buf
            .push(PreferenceRecord {
                first: seg.clone(),
                second: seg,
                label: Preference::Equal,
            })
            .unwrap_err();
        assert!(matches!(err, BufferError::Shape { .. }));
    }
}
