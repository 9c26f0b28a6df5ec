//! Bradley-Terry reward model learned from segment preferences.

use rand::Rng;
use thiserror::Error;

use crate::buffers::{BufferError, PreferenceBuffer, PreferenceRecord, TrajectorySegment};
use crate::nn::{layer_sizes, Adam, Checkpoint, CheckpointError, Gradients, Matrix, Mlp, NnError};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("empty preference batch")]
    EmptyBatch,
    #[error("no strict pairs to score")]
    NoStrictPairs,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("expected state dim {state} and action dim {action}, got {got_state} and {got_action}")]
    Dims {
        state: usize,
        action: usize,
        got_state: usize,
        got_action: usize,
    },
}

impl RewardError {
    /// True when the failure is a diverged loss, reward or gradient.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            RewardError::NonFinite(_) | RewardError::Nn(NnError::NonFiniteGradient { .. })
        )
    }
}

/// `P[sigma_1 > sigma_0]` for segment returns `r0`, `r1`, without overflow.
pub fn bt_probability(r0: f64, r1: f64) -> f64 {
    let d = r1 - r0;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cross-entropy of one pair given returns and label, and its derivative
/// with respect to `r1 - r0`.
pub fn bt_pair_loss(r0: f64, r1: f64, y0: f64, y1: f64) -> (f64, f64) {
    let d = r1 - r0;
    // log P1 = -softplus(-d), log P0 = -softplus(d)
    let loss = y0 * softplus(d) + y1 * softplus(-d);
    (loss, bt_probability(r0, r1) - y1)
}

/// Keeps initial segment returns small so pretraining starts near ln 2.
const OUTPUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    net: Mlp,
    adam: Adam,
    lr: f64,
    state_dim: usize,
    action_dim: usize,
}

/// Per-step losses and per-epoch summaries from [`RewardModel::pretrain`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PretrainTrace {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        lr: f64,
        rng: &mut R,
    ) -> Self {
        let net = Mlp::init_scaled_output(
            &layer_sizes(state_dim + action_dim, hidden, hidden_layers, 1),
            OUTPUT_INIT_SCALE,
            rng,
        );
        Self::from_net(net, state_dim, lr).expect("constructed with matching dims")
    }

    /// Wraps an existing scalar-output network whose input is `[s; a]`.
    pub fn from_net(net: Mlp, state_dim: usize, lr: f64) -> Result<Self, RewardError> {
        if net.output_dim() != 1 || net.input_dim() < state_dim {
            return Err(RewardError::Dims {
                state: state_dim,
                action: 0,
                got_state: net.input_dim(),
                got_action: net.output_dim(),
            });
        }
        let action_dim = net.input_dim() - state_dim;
        Ok(Self {
            adam: Adam::new(&net),
            net,
            lr,
            state_dim,
            action_dim,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn adam(&self) -> &Adam {
        &self.adam
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn predict_reward(&self, state: &[f64], action: &[f64]) -> Result<f64, RewardError> {
        self.check_dims(state.len(), action.len())?;
        let mut input = Vec::with_capacity(state.len() + action.len());
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        Ok(self.net.forward(&input)?[0])
    }

    /// Rewards for a batch of transitions, one per row.
    pub fn predict_batch(&self, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>, RewardError> {
        self.check_dims(states.cols(), actions.cols())?;
        let out = self.net.forward_batch(&Matrix::hcat(states, actions))?;
        let r = out.into_vec();
        if !r.iter().all(|v| v.is_finite()) {
            return Err(RewardError::NonFinite("reward"));
        }
        Ok(r)
    }

    /// Sum of per-step rewards over the segment.
    pub fn segment_return(&self, seg: &TrajectorySegment) -> Result<f64, RewardError> {
        self.check_dims(seg.state_dim(), seg.action_dim())?;
        let out = self.net.forward_batch(&seg.inputs())?;
        Ok(out.as_slice().iter().sum())
    }

    pub fn preference_probability(
        &self,
        first: &TrajectorySegment,
        second: &TrajectorySegment,
    ) -> Result<f64, RewardError> {
        Ok(bt_probability(
            self.segment_return(first)?,
            self.segment_return(second)?,
        ))
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grads(
        &self,
        batch: &[&PreferenceRecord],
    ) -> Result<(f64, Gradients), RewardError> {
        if batch.is_empty() {
            return Err(RewardError::EmptyBatch);
        }
        for rec in batch {
            for seg in [&rec.first, &rec.second] {
                self.check_dims(seg.state_dim(), seg.action_dim())?;
            }
        }
        // Rows of all segments in order first_0, second_0, first_1, ...
        let width = self.state_dim + self.action_dim;
        let mut data = Vec::new();
        let mut lens = Vec::with_capacity(2 * batch.len());
        for rec in batch {
            for seg in [&rec.first, &rec.second] {
                seg.extend_inputs(&mut data);
                lens.push(seg.len());
            }
        }
        let rows = data.len() / width;
        let tape = self.net.forward_tape(&Matrix::from_vec(rows, width, data))?;
        let out = tape.output().as_slice();

        let mut returns = Vec::with_capacity(lens.len());
        let mut offset = 0;
        for &len in &lens {
            returns.push(out[offset..offset + len].iter().sum::<f64>());
            offset += len;
        }

        let n = batch.len() as f64;
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(rows);
        for (i, rec) in batch.iter().enumerate() {
            let (y0, y1) = rec.label.as_pair();
            let (l, dd) = bt_pair_loss(returns[2 * i], returns[2 * i + 1], y0, y1);
            loss += l;
            upstream.extend(std::iter::repeat_n(-dd / n, lens[2 * i]));
            upstream.extend(std::iter::repeat_n(dd / n, lens[2 * i + 1]));
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(RewardError::NonFinite("preference loss"));
        }
        let (grads, _) = self
            .net
            .backward_tape(&tape, &Matrix::from_vec(rows, 1, upstream))?;
        if !grads.is_finite() {
            return Err(RewardError::NonFinite("reward gradient"));
        }
        Ok((loss, grads))
    }

    /// One Adam step on the batch; returns the pre-step loss.
    pub fn train_step(&mut self, batch: &[&PreferenceRecord]) -> Result<f64, RewardError> {
        let (loss, grads) = self.loss_and_grads(batch)?;
        self.adam.step(&mut self.net, &grads, self.lr)?;
        Ok(loss)
    }

    /// `epochs` passes of `ceil(len / batch_size)` uniformly sampled minibatches.
    pub fn pretrain<R: Rng + ?Sized>(
        &mut self,
        buffer: &PreferenceBuffer,
        epochs: usize,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<PretrainTrace, RewardError> {
        let mut trace = PretrainTrace::default();
        if epochs == 0 {
            return Ok(trace);
        }
        if buffer.is_empty() {
            return Err(RewardError::EmptyBatch);
        }
        let steps = buffer.len().div_ceil(batch_size.max(1));
        for epoch in 0..epochs {
            let mut total = 0.0;
            for _ in 0..steps {
                let batch = buffer.sample_batch(batch_size, rng)?;
                let loss = self.train_step(&batch)?;
                trace.step_losses.push(loss);
                total += loss;
            }
            trace.epochs.push(EpochSummary {
                epoch: epoch + 1,
                mean_loss: total / steps as f64,
            });
        }
        Ok(trace)
    }

    /// Mean loss over a full set, without updating.
    pub fn mean_loss(&self, records: &[PreferenceRecord]) -> Result<f64, RewardError> {
        if records.is_empty() {
            return Err(RewardError::EmptyBatch);
        }
        let mut total = 0.0;
        for chunk in records.chunks(256) {
            let refs: Vec<&PreferenceRecord> = chunk.iter().collect();
            let (l, _) = self.loss_and_grads(&refs)?;
            total += l * chunk.len() as f64;
        }
        Ok(total / records.len() as f64)
    }

    /// Fraction of strict-label pairs whose larger return matches the label.
    /// Equal returns count as wrong; equal labels are skipped.
    pub fn prediction_accuracy(&self, records: &[PreferenceRecord]) -> Result<f64, RewardError> {
        let mut strict = 0usize;
        let mut correct = 0usize;
        for rec in records {
            let (y0, y1) = rec.label.as_pair();
            if y0 == y1 {
                continue;
            }
            strict += 1;
            let r0 = self.segment_return(&rec.first)?;
            let r1 = self.segment_return(&rec.second)?;
            if (y1 > y0 && r1 > r0) || (y0 > y1 && r0 > r1) {
                correct += 1;
            }
        }
        if strict == 0 {
            return Err(RewardError::NoStrictPairs);
        }
        Ok(correct as f64 / strict as f64)
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push_mlp(prefix, &self.net);
        ckpt.push_adam(prefix, &self.net, &self.adam);
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<(), RewardError> {
        ckpt.restore_mlp(prefix, &mut self.net)?;
        ckpt.restore_adam(prefix, &self.net, &mut self.adam)?;
        Ok(())
    }

    fn check_dims(&self, state: usize, action: usize) -> Result<(), RewardError> {
        if state != self.state_dim || action != self.action_dim {
            return Err(RewardError::Dims {
                state: self.state_dim,
                action: self.action_dim,
                got_state: state,
                got_action: action,
            });
        }
        Ok(())
    }
}
