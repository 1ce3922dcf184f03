use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            grad: Tensor::zeros(r, c),
            adam_m: Tensor::zeros(r, c),
            adam_v: Tensor::zeros(r, c),
            value,
            step_count: 0,
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step from `p.grad`, which is cleared afterwards.
pub fn adam_update(p: &mut Parameter, cfg: &AdamConfig) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let g = p.grad.data();
    let m = p.adam_m.data_mut();
    for (m, &g) in m.iter_mut().zip(g) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    }
    let v = p.adam_v.data_mut();
    for (v, &g) in v.iter_mut().zip(g) {
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    }
    let m = p.adam_m.data();
    let v = p.adam_v.data();
    for ((w, &m), &v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
        *w -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
    }
    p.grad.fill(0.0);
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn empty(n: usize) -> Self {
        Self {
            grads: vec![None; n],
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g.clone());
            }
        }
    }

    /// All gradient entries flattened in parameter order (missing ones as zeros).
    pub fn flatten(&self, store: &ParamStore) -> Vec<f64> {
        let mut out = Vec::with_capacity(store.num_values());
        for (i, p) in store.params.iter().enumerate() {
            match &self.grads[i] {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(p.value.len())),
            }
        }
        out
    }
}

/// Owns every parameter of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                p.grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        for p in &mut self.params {
            adam_update(p, cfg);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.params.iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::NonFinite(format!("{context}: parameter {}", p.name))),
            None => Ok(()),
        }
    }

    /// Flattened parameter values in id order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Replaces the value of `id`, keeping optimizer state.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Parameter {
        Parameter::new("p", Tensor::row_vector(values.to_vec()))
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameter_unchanged() {
        let mut p = param(&[1.0, -2.0]);
        adam_update(&mut p, &AdamConfig::with_lr(0.1));
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(p.adam_m.data(), &[0.0, 0.0]);
        assert_eq!(p.adam_v.data(), &[0.0, 0.0]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = param(&[0.0, 0.0, 0.0]);
        p.grad = Tensor::row_vector(vec![0.5, -3.0, 1e-3]);
        let cfg = AdamConfig::with_lr(0.01);
        adam_update(&mut p, &cfg);
        // m_hat = g and v_hat = g^2 after bias correction, so the step is lr*g/(|g|+eps).
        for (w, g) in p.value.data().iter().zip([0.5f64, -3.0, 1e-3]) {
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-12, "{w} vs {expect}");
        }
        assert_eq!(p.grad.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn two_steps_follow_moment_recursion() {
        let mut p = param(&[1.0]);
        let cfg = AdamConfig::with_lr(0.05);
        let g = 0.3;
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=2 {
            p.grad = Tensor::row_vector(vec![g]);
            adam_update(&mut p, &cfg);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.05 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.value.data()[0] - w).abs() < 1e-15);
        assert!((p.adam_m.data()[0] - m).abs() < 1e-15);
        assert!((p.adam_v.data()[0] - v).abs() < 1e-15);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = param(&[0.2, 0.4]);
        a.grad = Tensor::row_vector(vec![1.0, -1.0]);
        let mut b = a.clone();
        adam_update(&mut a, &AdamConfig::default());
        adam_update(&mut b, &AdamConfig::default());
        assert_eq!(a, b);
    }
}
