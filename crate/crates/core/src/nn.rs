//! Named parameter storage, tape binding, initialisation and the Adam optimiser.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Mat, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Mat::len).sum()
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding { vars: self.values.iter().map(|v| tape.leaf(v.clone())).collect() }
    }

    /// Per-parameter gradients in store order (zeros where none flowed).
    pub fn collect_grads(&self, binding: &Binding, grads: &Gradients) -> Vec<Mat> {
        self.values
            .iter()
            .zip(&binding.vars)
            .map(|(v, &var)| grads.get_or_zeros(var, v.dim()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Glorot-uniform weights.
pub fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Mat> = store.values.iter().map(|p| Mat::zeros(p.dim())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment estimates in store order.
    pub fn moments(&self) -> (&[Mat], &[Mat]) {
        (&self.m, &self.v)
    }

    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Mat>, v: Vec<Mat>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Mat]) {
        assert_eq!(grads.len(), store.values.len());
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in store.values.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..Default::default() }, &store);
        for _ in 0..500 {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let loss = tape.sum_sq(b.var(id));
            let g = tape.backward(loss);
            let grads = store.collect_grads(&b, &g);
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[1.0]]);
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.0, ..Default::default() }, &store);
        adam.step(&mut store, &[array![[5.0]]]);
        assert_eq!(store.get(id)[[0, 0]], 1.0);
    }
}
