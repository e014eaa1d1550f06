use super::{AutodiffError, Gradients, Graph, Tensor, Var};

/// Named trainable tensors in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push((name.into(), tensor.with_grad()));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter as a differentiable leaf, in order.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| g.variable(t)).collect()
    }

    /// Copies gradients for `vars` (as returned by [`bind`](Self::bind)) into the tensors.
    pub fn absorb(&mut self, grads: &Gradients, vars: &[Var]) {
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            t.grad = Some(grads.wrt(v));
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = None;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment accumulators, shape-matched to a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update using the gradients stored on `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<(), AutodiffError> {
        if params.len() != self.first.len() {
            return Err(AutodiffError::StateMismatch(format!(
                "{} parameters, state tracks {}",
                params.len(),
                self.first.len()
            )));
        }
        for ((name, t), m) in params.iter().zip(&self.first) {
            match &t.grad {
                None => return Err(AutodiffError::MissingGrad(name.to_string())),
                Some(g) if g.len() != m.len() => return Err(AutodiffError::StateMismatch(name.to_string())),
                Some(_) => {}
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((_, t), m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = t.grad.take().expect("checked above");
            for (((p, gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
            t.grad = Some(g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("x", Tensor::scalar(value));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = single(0.7);
        p.get_mut("x").unwrap().grad = Some(vec![0.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p).unwrap();
        assert_eq!(p.get("x").unwrap().data(), &[0.7]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(1.0);
        p.get_mut("x").unwrap().grad = Some(vec![1.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p).unwrap();
        let moved = 1.0 - p.get("x").unwrap().data()[0];
        assert!((moved - 1e-4).abs() < 1e-10, "moved {moved}");
    }

    #[test]
    fn descends_on_parabola() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(&p, AdamConfig { lr: 0.05, ..AdamConfig::default() });
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let mut g = Graph::new();
            let vars = p.bind(&mut g);
            let sq = g.square(vars[0]).unwrap();
            let grads = g.backward(sq).unwrap();
            p.absorb(&grads, &vars);
            adam.step(&mut p).unwrap();
            let x = p.get("x").unwrap().data()[0];
            assert!(x.abs() < prev.abs());
            prev = x;
        }
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = single(1.0);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        assert_eq!(adam.step(&mut p), Err(AutodiffError::MissingGrad("x".into())));
        assert_eq!(adam.step_count(), 0);
    }
}
