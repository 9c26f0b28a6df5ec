//! Deterministic tanh-squashed actor and the critic helpers shared by
//! PrefRec and the baselines.

use rand::Rng;

use crate::nn::{layer_sizes, to_storage, Adam, Checkpoint, CheckpointError, Gradients, Matrix, Mlp, NnError, Tape};

/// A network together with its optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainable {
    pub net: Mlp,
    pub adam: Adam,
}

impl Trainable {
    pub fn new(net: Mlp) -> Self {
        Self {
            adam: Adam::new(&net),
            net,
        }
    }

    pub fn step(&mut self, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        self.adam.step(&mut self.net, grads, lr)
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push_mlp(prefix, &self.net);
        ckpt.push_adam(prefix, &self.net, &self.adam);
    }

    pub fn restore_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<(), CheckpointError> {
        ckpt.restore_mlp(prefix, &mut self.net)?;
        ckpt.restore_adam(prefix, &self.net, &mut self.adam)
    }
}

/// Maps a state to an action in `(-1, 1)^d_a` via `tanh(net(s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    net: Mlp,
}

/// Output scale of the actor's last layer at initialization.
const ACTOR_INIT_SCALE: f64 = 0.1;

impl Policy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        rng: &mut R,
    ) -> Self {
        let sizes = layer_sizes(state_dim, hidden, hidden_layers, action_dim);
        Self {
            net: Mlp::init_scaled_output(&sizes, ACTOR_INIT_SCALE, rng),
        }
    }

    pub fn from_net(net: Mlp) -> Self {
        Self { net }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn into_net(self) -> Mlp {
        self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut a = self.net.forward(state)?;
        a.iter_mut().for_each(|v| *v = v.tanh());
        Ok(a)
    }

    pub fn act_batch(&self, states: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward_tape(states)?.1)
    }

    /// Batched forward keeping the tape for [`Policy::backward`].
    pub fn forward_tape(&self, states: &Matrix) -> Result<(Tape, Matrix), NnError> {
        let tape = self.net.forward_tape(states)?;
        let mut actions = tape.output().clone();
        actions.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        Ok((tape, actions))
    }

    /// Parameter gradient of `sum_i <upstream_i, action_i>`.
    pub fn backward(
        &self,
        tape: &Tape,
        actions: &Matrix,
        upstream: &Matrix,
    ) -> Result<Gradients, NnError> {
        let mut pre = upstream.clone();
        for (g, a) in pre.as_mut_slice().iter_mut().zip(actions.as_slice()) {
            *g *= 1.0 - a * a;
        }
        Ok(self.net.backward_tape(tape, &pre)?.0)
    }
}

/// Per-dimension standardization `(s - mean) / std`, fitted once on the
/// replay states. Statistics live on the 32-bit grid so they checkpoint
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for ((s, q), x) in sum.iter_mut().zip(&mut sq).zip(r) {
                *s += x;
                *q += x * x;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| to_storage(s / nf)).collect();
        let inv_std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-12 {
                    to_storage(1.0 / var.sqrt())
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((x, m), k)| (x - m) * k)
            .collect()
    }

    pub fn apply(&self, states: &Matrix) -> Matrix {
        let mut out = states.clone();
        for i in 0..out.rows() {
            for ((x, m), k) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.inv_std) {
                *x = (*x - m) * k;
            }
        }
        out
    }

    pub fn save_to(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.push(format!("{prefix}.mean"), vec![self.dim()], &self.mean);
        ckpt.push(format!("{prefix}.inv_std"), vec![self.dim()], &self.inv_std);
    }

    pub fn load(ckpt: &Checkpoint, prefix: &str) -> Result<Self, CheckpointError> {
        let widen = |name: String| -> Result<Vec<f64>, CheckpointError> {
            Ok(ckpt.get(&name)?.data.iter().map(|&v| v as f64).collect())
        };
        let mean = widen(format!("{prefix}.mean"))?;
        let inv_std = widen(format!("{prefix}.inv_std"))?;
        if mean.len() != inv_std.len() {
            return Err(CheckpointError::Shape {
                name: format!("{prefix}.inv_std"),
                expected: vec![mean.len()],
                actual: vec![inv_std.len()],
            });
        }
        Ok(Self { mean, inv_std })
    }
}

/// A trained policy as deployed: raw simulator states in, actions out.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub policy: Policy,
    pub normalizer: Option<Normalizer>,
}

impl From<Policy> for Actor {
    fn from(policy: Policy) -> Self {
        Self {
            policy,
            normalizer: None,
        }
    }
}

impl Actor {
    pub fn new(policy: Policy, normalizer: Option<Normalizer>) -> Self {
        Self { policy, normalizer }
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        match &self.normalizer {
            Some(n) => self.policy.act(&n.apply_row(state)),
            None => self.policy.act(state),
        }
    }

    pub fn act_batch(&self, states: &Matrix) -> Result<Matrix, NnError> {
        match &self.normalizer {
            Some(n) => self.policy.act_batch(&n.apply(states)),
            None => self.policy.act_batch(states),
        }
    }
}

/// Builds a Q network over `[s; a]` with a scalar output.
pub fn init_critic<R: Rng + ?Sized>(
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
    hidden_layers: usize,
    rng: &mut R,
) -> Mlp {
    Mlp::init(
        &layer_sizes(state_dim + action_dim, hidden, hidden_layers, 1),
        rng,
    )
}

/// Builds a state-value network with a scalar output.
pub fn init_value<R: Rng + ?Sized>(
    state_dim: usize,
    hidden: usize,
    hidden_layers: usize,
    rng: &mut R,
) -> Mlp {
    Mlp::init(&layer_sizes(state_dim, hidden, hidden_layers, 1), rng)
}

/// `Q(s, a)` for every row.
pub fn q_values(q: &Mlp, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>, NnError> {
    Ok(q.forward_batch(&Matrix::hcat(states, actions))?.into_vec())
}

/// `V(s)` for every row.
pub fn values(v: &Mlp, states: &Matrix) -> Result<Vec<f64>, NnError> {
    Ok(v.forward_batch(states)?.into_vec())
}

/// Mean squared error `mean (f(x) - y)^2` and its gradient.
pub fn regression_loss(
    net: &Mlp,
    inputs: &Matrix,
    targets: &[f64],
) -> Result<(f64, Gradients), NnError> {
    let tape = net.forward_tape(inputs)?;
    let pred = tape.output().as_slice();
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let mut up = Vec::with_capacity(targets.len());
    for (p, y) in pred.iter().zip(targets) {
        let u = p - y;
        loss += u * u;
        up.push(2.0 * u / n);
    }
    let (g, _) = net.backward_tape(&tape, &Matrix::from_vec(targets.len(), 1, up))?;
    Ok((loss / n, g))
}

/// `-mean_i Q(s_i, pi(s_i))` and its gradient with respect to the policy.
/// The critic is only read.
pub fn policy_loss(policy: &Policy, q: &Mlp, states: &Matrix) -> Result<(f64, Gradients), NnError> {
    let (ptape, actions) = policy.forward_tape(states)?;
    let n = states.rows();
    let qtape = q.forward_tape(&Matrix::hcat(states, &actions))?;
    let loss = -qtape.output().as_slice().iter().sum::<f64>() / n as f64;
    let up = Matrix::from_vec(n, 1, vec![-1.0 / n as f64; n]);
    let (_, dx) = q.backward_tape(&qtape, &up)?;
    let da = dx.columns(states.cols(), dx.cols());
    Ok((loss, policy.backward(&ptape, &actions, &da)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::relative_error;
    use crate::rng::stream_rng;

    #[test]
    fn actions_stay_in_box() {
        let mut rng = stream_rng(0, 0, 0);
        let mut p = Policy::new(4, 3, 8, 2, &mut rng);
        for w in p.net_mut().params_mut() {
            *w *= 100.0;
        }
        let a = p.act(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn batch_and_single_agree() {
        let mut rng = stream_rng(1, 0, 0);
        let p = Policy::new(4, 3, 8, 2, &mut rng);
        let s = [0.3, -0.1, 0.7, 1.2];
        let single = p.act(&s).unwrap();
        let batch = p.act_batch(&Matrix::from_rows(&[s])).unwrap();
        for (a, b) in single.iter().zip(batch.row(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = stream_rng(2, 0, 0);
        let p = Policy::new(3, 2, 6, 1, &mut rng);
        let q = init_critic(3, 2, 6, 1, &mut rng);
        let states = Matrix::from_rows(&[[0.2, -0.4, 0.9], [1.1, 0.3, -0.5]]);
        let (_, g) = policy_loss(&p, &q, &states).unwrap();
        let analytic: Vec<f64> = g.values().copied().collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            *plus.net_mut().param_mut(i) += h;
            let mut minus = p.clone();
            *minus.net_mut().param_mut(i) -= h;
            let lp = policy_loss(&plus, &q, &states).unwrap().0;
            let lm = policy_loss(&minus, &q, &states).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            if a.abs() > 1e-7 || numeric.abs() > 1e-7 {
                worst = worst.max(relative_error(*a, numeric));
            }
        }
        assert!(worst < 1e-4, "worst {worst}");
    }
}
