use super::mlp::{to_storage, Gradients, Mlp};
use super::NnError;

/// Adam with bias correction. Moments are kept on the 32-bit storage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.second
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn restore(
        &mut self,
        step: u64,
        first: Gradients,
        second: Gradients,
    ) -> Result<(), NnError> {
        if first.weights.len() != self.first.weights.len()
            || first.values().count() != self.first.values().count()
            || second.values().count() != self.second.values().count()
        {
            return Err(NnError::ParamShape);
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }

    /// One Adam update of `params` along `grads`.
    ///
    /// Rejects non-finite gradients without touching any state; there is no
    /// clipping.
    pub fn step(&mut self, params: &mut Mlp, grads: &Gradients, lr: f64) -> Result<(), NnError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::InvalidLearningRate(lr));
        }
        if !grads.matches(params) || !self.first.matches(params) {
            return Err(NnError::ParamShape);
        }
        if let Some(layer) = (0..grads.weights.len()).find(|&k| {
            !grads.weights[k].iter().all(|v| v.is_finite())
                || !grads.biases[k].iter().all(|v| v.is_finite())
        }) {
            return Err(NnError::NonFiniteGradient { layer });
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);

        let moments = self.first.values_mut().zip(self.second.values_mut());
        for ((p, g), (m, v)) in params.params_mut().zip(grads.values()).zip(moments) {
            *m = to_storage(b1 * *m + (1.0 - b1) * g);
            *v = to_storage(b2 * *v + (1.0 - b2) * g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = to_storage(*p - lr * m_hat / (v_hat.sqrt() + eps));
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step(
    params: &mut Mlp,
    grads: &Gradients,
    state: &mut Adam,
    lr: f64,
) -> Result<(), NnError> {
    state.step(params, grads, lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn scalar(w: f64) -> Mlp {
        Mlp::from_layers(vec![
            Layer::new(1, 1, vec![w], vec![0.0], Activation::Identity).unwrap(),
        ])
        .unwrap()
    }

    fn grad_of(net: &Mlp, dw: f64) -> Gradients {
        let mut g = Gradients::zeros_like(net);
        g.weights[0][0] = dw;
        g
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut net = scalar(0.5);
        let mut adam = Adam::new(&net);
        let g = Gradients::zeros_like(&net);
        adam.step(&mut net, &g, 0.1).unwrap();
        assert_eq!(net.layers()[0].weight()[0], 0.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for &g in &[3.0, -0.02, 250.0] {
            let mut net = scalar(0.0);
            let mut adam = Adam::new(&net);
            let grad = grad_of(&net, g);
            adam.step(&mut net, &grad, 0.1).unwrap();
            let moved = net.layers()[0].weight()[0];
            assert!((moved.abs() - 0.1).abs() < 1e-6, "g={g} moved {moved}");
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn descends_scalar_quadratic() {
        // f(w) = (w - 3)^2, f'(w) = 2 (w - 3)
        let mut net = scalar(0.0);
        let mut adam = Adam::new(&net);
        let mut prev = 3.0_f64;
        for _ in 0..10 {
            let w = net.layers()[0].weight()[0];
            let grad = grad_of(&net, 2.0 * (w - 3.0));
            adam.step(&mut net, &grad, 0.1).unwrap();
            let gap = (net.layers()[0].weight()[0] - 3.0).abs();
            assert!(gap < prev, "gap {gap} did not shrink from {prev}");
            prev = gap;
        }
        assert!(prev < 3.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut net = scalar(1.0);
        let mut adam = Adam::new(&net);
        let grad = grad_of(&net, f64::NAN);
        let err = adam.step(&mut net, &grad, 0.1).unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient { layer: 0 });
        assert_eq!(adam.step_count(), 0);
        assert_eq!(net.layers()[0].weight()[0], 1.0);
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        let mut net = scalar(1.0);
        let mut adam = Adam::new(&net);
        let g = grad_of(&net, 1.0);
        assert!(adam.step(&mut net, &g, 0.0).is_err());
        assert!(adam.step(&mut net, &g, -1.0).is_err());
    }
}
