use rand::Rng;

use super::matrix::{matmul, matmul_at, matmul_bt, Matrix};
use super::NnError;

/// Rounds a value to the 32-bit storage grid.
///
/// Parameters and optimizer moments live on this grid so that checkpoints,
/// which store `f32`, restore them bit for bit. Arithmetic stays in `f64`.
#[inline]
pub fn to_storage(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Rectifier; the subgradient at zero is zero.
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` stored `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    activation: Activation,
}

impl Layer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(NnError::LayerShape {
                inputs,
                outputs,
                weight_len: weight.len(),
                bias_len: bias.len(),
            });
        }
        Ok(Self {
            weight,
            bias,
            inputs,
            activation,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            inputs,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Row-major `outputs x inputs`.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f64] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Parameters of a fixed-architecture multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-parameter partial derivatives, shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) biases: Vec<Vec<f64>>,
}

/// Layer inputs recorded by a batched forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[k]` is the input of layer `k`; the last entry is the output.
    activations: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape always holds the input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("tape always holds the input")
    }
}

impl Mlp {
    /// Builds from explicit layers, checking that shapes compose.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Empty);
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs != pair[0].outputs() {
                return Err(NnError::IncompatibleLayers {
                    layer: k + 1,
                    expected: pair[0].outputs(),
                    actual: pair[1].inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Rectifier hidden layers and an identity output layer, all zeros.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::zeros(w[0], w[1], act)
            })
            .collect();
        Self { layers }
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases, rounded to storage precision.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs.max(1) as f64).sqrt();
            for w in &mut layer.weight {
                *w = to_storage(rng.random_range(-bound..bound));
            }
            for b in &mut layer.bias {
                *b = to_storage(rng.random_range(-bound..bound));
            }
        }
        net
    }

    /// Same as [`Mlp::init`] but scales the output layer, useful for actors
    /// that should start near the centre of their action box.
    pub fn init_scaled_output<R: Rng + ?Sized>(sizes: &[usize], scale: f64, rng: &mut R) -> Self {
        let mut net = Self::init(sizes, rng);
        let last = net.layers.last_mut().expect("non-empty");
        for w in last.weight.iter_mut().chain(last.bias.iter_mut()) {
            *w = to_storage(*w * scale);
        }
        net
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access. Shapes cannot be changed through it.
    pub fn layer_mut(&mut self, k: usize) -> &mut Layer {
        &mut self.layers[k]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Layer widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    /// The `idx`-th parameter in [`Mlp::params`] order.
    pub fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if idx < layer.weight.len() {
                return &mut layer.weight[idx];
            }
            idx -= layer.weight.len();
            if idx < layer.bias.len() {
                return &mut layer.bias[idx];
            }
            idx -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Bitwise equality of every parameter.
    pub fn bits_eq(&self, other: &Mlp) -> bool {
        self.sizes() == other.sizes()
            && self
                .params()
                .zip(other.params())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Forward pass for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = layer.bias.clone();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let mut acc = 0.0;
                for (w, xi) in row.iter().zip(&x) {
                    acc += w * xi;
                }
                *yo = layer.activation.apply(*yo + acc);
            }
            x = y;
        }
        Ok(x)
    }

    /// Batched forward pass, one input per row.
    pub fn forward_batch(&self, input: &Matrix) -> Result<Matrix, NnError> {
        Ok(self.forward_tape(input)?.into_output())
    }

    /// Batched forward pass that records what [`Mlp::backward_tape`] needs.
    pub fn forward_tape(&self, input: &Matrix) -> Result<Tape, NnError> {
        if input.cols() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: input.cols(),
            });
        }
        let batch = input.rows();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let out = layer.outputs();
            let mut z = Matrix::zeros(batch, out);
            matmul_bt(
                x.as_slice(),
                &layer.weight,
                batch,
                layer.inputs,
                out,
                z.as_mut_slice(),
            );
            for row in z.as_mut_slice().chunks_exact_mut(out.max(1)) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            activations.push(z);
        }
        Ok(Tape { activations })
    }

    /// Gradient of `sum_i <upstream_i, output_i>` with respect to every
    /// parameter and every input row.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        upstream: &Matrix,
    ) -> Result<(Gradients, Matrix), NnError> {
        let out = tape.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(NnError::ShapeMismatch {
                layer: self.layers.len() - 1,
                expected: out.cols(),
                actual: upstream.cols(),
            });
        }
        let batch = upstream.rows();
        let mut grads = Gradients::zeros_like(self);
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let y = &tape.activations[k + 1];
            if layer.activation == Activation::Relu {
                for (d, &yv) in delta.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    if yv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &tape.activations[k];
            let outputs = layer.outputs();
            matmul_at(
                delta.as_slice(),
                x.as_slice(),
                batch,
                outputs,
                layer.inputs,
                &mut grads.weights[k],
            );
            let gb = &mut grads.biases[k];
            for row in delta.as_slice().chunks_exact(outputs.max(1)).take(batch) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut dx = Matrix::zeros(batch, layer.inputs);
            matmul(
                delta.as_slice(),
                &layer.weight,
                batch,
                outputs,
                layer.inputs,
                dx.as_mut_slice(),
            );
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// Gradient of `<upstream_grad, forward(input)>` for a single input.
    pub fn backward(
        &self,
        input: &[f64],
        upstream_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NnError> {
        if upstream_grad.len() != self.output_dim() {
            return Err(NnError::ShapeMismatch {
                layer: self.layers.len() - 1,
                expected: self.output_dim(),
                actual: upstream_grad.len(),
            });
        }
        let tape = self.forward_tape(&Matrix::from_vec(1, input.len(), input.to_vec()))?;
        let up = Matrix::from_vec(1, upstream_grad.len(), upstream_grad.to_vec());
        let (g, dx) = self.backward_tape(&tape, &up)?;
        Ok((g, dx.into_vec()))
    }

    /// Smallest absolute hidden pre-activation for `input`; small values mean
    /// the input sits near a rectifier kink where finite differences break.
    pub fn kink_margin(&self, input: &[f64]) -> Result<f64, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        let mut margin = f64::INFINITY;
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut y = vec![0.0; layer.outputs()];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
                let z: f64 = layer.bias[o] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
                if layer.activation == Activation::Relu {
                    margin = margin.min(z.abs());
                }
                *yo = layer.activation.apply(z);
            }
            x = y;
        }
        Ok(margin)
    }

    /// Elementwise `self <- (1 - retention) * source + retention * self`,
    /// rounded to storage precision.
    pub fn blend_from(&mut self, source: &Mlp, retention: f64) -> Result<(), NnError> {
        if self.sizes() != source.sizes() {
            return Err(NnError::ParamShape);
        }
        for (t, s) in self.params_mut().zip(source.params()) {
            *t = to_storage((1.0 - retention) * s + retention * *t);
        }
        Ok(())
    }
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].len() == l.weight.len() && self.biases[k].len() == l.bias.len()
            })
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Denominator floor for relative gradient errors.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Relative error with a small absolute floor in the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Largest relative error between analytic and central-difference gradients
/// of the scalar readout `sum(forward(input))`, over every parameter and
/// every input coordinate.
pub fn finite_diff_check(params: &Mlp, input: &[f64], h: f64) -> Result<f64, NnError> {
    assert!(h > 0.0, "finite difference step must be positive");
    let readout = |net: &Mlp, x: &[f64]| -> Result<f64, NnError> {
        Ok(net.forward(x)?.iter().sum())
    };
    let ones = vec![1.0; params.output_dim()];
    let (grads, input_grad) = params.backward(input, &ones)?;

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let analytic: Vec<f64> = grads.values().copied().collect();
    for (idx, &a) in analytic.iter().enumerate() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + h;
        let plus = readout(&probe, input)?;
        *probe.param_mut(idx) = original - h;
        let minus = readout(&probe, input)?;
        *probe.param_mut(idx) = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }

    let mut x = input.to_vec();
    for (i, &a) in input_grad.iter().enumerate() {
        let original = x[i];
        x[i] = original + h;
        let plus = readout(params, &x)?;
        x[i] = original - h;
        let minus = readout(params, &x)?;
        x[i] = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line dense evaluation, independent of the batched kernels.
    fn naive_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        for layer in net.layers() {
            let n_in = layer.inputs();
            let mut y = Vec::new();
            for o in 0..layer.outputs() {
                let mut z = layer.bias()[o];
                for i in 0..n_in {
                    z += layer.weight()[o * n_in + i] * x[i];
                }
                y.push(match layer.activation() {
                    Activation::Relu => z.max(0.0),
                    Activation::Identity => z,
                });
            }
            x = y;
        }
        x
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[5, 7, 3]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let layer = Layer::new(3, 3, w, vec![0.0; 3], Activation::Identity).unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = [0.25, -4.0, 7.5];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let mut r = rng(11);
        let net = Mlp::init(&[6, 16, 4], &mut r);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * 0.4).collect();
        let got = net.forward(&x).unwrap();
        let want = naive_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0), "{g} vs {w}");
        }
        let batch = Matrix::from_rows(&[x.clone(), x.iter().map(|v| -v).collect()]);
        let out = net.forward_batch(&batch).unwrap();
        for (g, w) in out.row(0).iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let net = Mlp::zeros(&[4, 3, 2]);
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let bad = Mlp::from_layers(vec![
            Layer::zeros(4, 3, Activation::Relu),
            Layer::zeros(5, 2, Activation::Identity),
        ]);
        assert!(matches!(bad, Err(NnError::IncompatibleLayers { layer: 1, .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Mlp::init(&[3, 8, 2], &mut rng(3));
        let (g, dx) = net.backward(&[0.3, -0.2, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let layer = Layer::new(
            3,
            2,
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            vec![0.0, 0.0],
            Activation::Identity,
        )
        .unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let x = [1.0, -2.0, 0.5];
        let g = [3.0, -1.0];
        let (grads, _) = net.backward(&x, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.weight(0)[o * 3 + i], g[o] * x[i]);
            }
        }
        assert_eq!(grads.bias(0), &g);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(5);
        let mut checked = 0;
        while checked < 5 {
            let net = Mlp::init(&[5, 12, 12, 3], &mut r);
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
            if net.kink_margin(&x).unwrap() < 1e-3 {
                continue;
            }
            let err = finite_diff_check(&net, &x, 1e-4).unwrap();
            assert!(err < 1e-4, "max relative error {err}");
            checked += 1;
        }
    }

    #[test]
    fn linear_net_finite_difference_is_exact() {
        let layer = Layer::new(
            2,
            2,
            vec![0.5, -1.5, 2.0, 0.25],
            vec![0.1, -0.3],
            Activation::Identity,
        )
        .unwrap();
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let err = finite_diff_check(&net, &[0.7, -1.3], 1e-4).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn coarse_step_on_curved_net_is_detected() {
        let mut r = rng(21);
        let net = Mlp::init(&[4, 32, 32, 1], &mut r);
        let x = [0.3, -0.8, 0.5, 0.1];
        let err = finite_diff_check(&net, &x, 1.0).unwrap();
        assert!(err > 1e-2, "coarse step should fail the check, got {err}");
    }

    #[test]
    fn forward_does_not_mutate() {
        let net = Mlp::init(&[3, 4, 1], &mut rng(1));
        let before = net.clone();
        let _ = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.bits_eq(&before));
    }

    #[test]
    fn init_is_on_storage_grid_and_seeded() {
        let a = Mlp::init(&[3, 4, 2], &mut rng(9));
        let b = Mlp::init(&[3, 4, 2], &mut rng(9));
        assert!(a.bits_eq(&b));
        assert!(a.params().all(|p| to_storage(*p) == *p));
    }
}
