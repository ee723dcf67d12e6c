//! Named parameters, layer primitives built on the tape, and the Adam optimizer.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tape::{Gradients, Graph, Matrix, Var};

/// Optimizer group a parameter belongs to. The two groups train at different
/// learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Encoder, social module and decoder.
    Main,
    /// Gaussian-LSTM latent predictors.
    Latent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Matrix,
    pub group: ParamGroup,
}

/// Flat, ordered map from parameter name to value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix, group: ParamGroup) {
        self.params.insert(name.into(), Param { value, group });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> &Matrix {
        &self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Matrix {
        &mut self.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Fills every parameter with zeros.
    pub fn zero_all(&mut self) {
        for p in self.params.values_mut() {
            p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Registers a linear layer `x·w + b` with uniform `±1/sqrt(fan_in)` init.
    pub fn add_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, group: ParamGroup, rng: &mut impl Rng) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.insert(format!("{prefix}.w"), uniform(fan_in, fan_out, bound, rng), group);
        self.insert(format!("{prefix}.b"), uniform(1, fan_out, bound, rng), group);
    }

    /// Registers an LSTM cell with gate layout `[input, forget, cell, output]`.
    pub fn add_lstm(&mut self, prefix: &str, input: usize, hidden: usize, group: ParamGroup, rng: &mut impl Rng) {
        let bound = 1.0 / (hidden as f64).sqrt();
        self.insert(format!("{prefix}.wx"), uniform(input, 4 * hidden, bound, rng), group);
        self.insert(format!("{prefix}.wh"), uniform(hidden, 4 * hidden, bound, rng), group);
        self.insert(format!("{prefix}.b"), uniform(1, 4 * hidden, bound, rng), group);
    }
}

pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect())
}

/// Lazily inserts parameters of a store into a graph as leaves, so the
/// gradient of each used parameter can be read back after `backward`.
pub struct Binding<'a> {
    graph: &'a Graph,
    store: &'a ParamStore,
    vars: RefCell<HashMap<String, Var>>,
}

impl<'a> Binding<'a> {
    pub fn new(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Self { graph, store, vars: RefCell::new(HashMap::new()) }
    }

    pub fn graph(&self) -> &'a Graph {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn get(&self, name: &str) -> Var {
        if let Some(&v) = self.vars.borrow().get(name) {
            return v;
        }
        let v = self.graph.leaf(self.store.value(name).clone());
        self.vars.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn linear(&self, prefix: &str) -> Linear {
        Linear { w: self.get(&format!("{prefix}.w")), b: self.get(&format!("{prefix}.b")) }
    }

    pub fn lstm(&self, prefix: &str) -> Lstm {
        let wh = self.get(&format!("{prefix}.wh"));
        let hidden = self.graph.shape(wh).0;
        Lstm { wx: self.get(&format!("{prefix}.wx")), wh, b: self.get(&format!("{prefix}.b")), hidden }
    }

    /// Gradients of the parameters that took part in the computation.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.vars
            .borrow()
            .iter()
            .filter_map(|(name, &v)| grads.get(v).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn forward(&self, g: &Graph, x: Var) -> Var {
        g.add(g.matmul(x, self.w), self.b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn zero_state(&self, g: &Graph, rows: usize) -> LstmState {
        let z = g.leaf(Matrix::zeros(rows, self.hidden));
        LstmState { h: z, c: z }
    }

    pub fn step(&self, g: &Graph, x: Var, state: LstmState) -> LstmState {
        let gates = g.add(g.add(g.matmul(x, self.wx), g.matmul(state.h, self.wh)), self.b);
        let (h, c) = g.lstm_cell(gates, state.c);
        LstmState { h, c }
    }

    /// Runs the recurrence over `inputs` from `state`, returning every hidden state.
    pub fn unroll(&self, g: &Graph, inputs: &[Var], mut state: LstmState) -> (Vec<Var>, LstmState) {
        let mut hs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(g, x, state);
            hs.push(state.h);
        }
        (hs, state)
    }
}

/// Adam with per-group learning rates and global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    lr_main: f64,
    lr_latent: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl Adam {
    pub fn new(lr_main: f64, lr_latent: f64) -> Self {
        Self {
            lr_main,
            lr_latent,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn with_clip_norm(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    /// Returns the global gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Matrix>) -> f64 {
        let norm = grads.values().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
        let scale = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let param = store.params.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            let lr = match param.group {
                ParamGroup::Main => self.lr_main,
                ParamGroup::Latent => self.lr_latent,
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Matrix::zeros(grad.rows(), grad.cols()), Matrix::zeros(grad.rows(), grad.cols())));
            let values = param.value.data_mut();
            for (((p, &gr), mi), vi) in values.iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                let gr = gr * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_with_zero_weights_stays_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add_lstm("l", 3, 4, ParamGroup::Main, &mut rng);
        store.zero_all();
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let lstm = bind.lstm("l");
        let x = g.leaf(Matrix::filled(2, 3, 0.7));
        let (hs, _) = lstm.unroll(&g, &[x, x, x], lstm.zero_state(&g, 2));
        for h in hs {
            assert_eq!(g.value(h).max_abs(), 0.0);
        }
    }

    #[test]
    fn adam_moves_against_gradient_and_skips_unused() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::scalar(1.0), ParamGroup::Main);
        store.insert("b", Matrix::scalar(1.0), ParamGroup::Latent);
        let mut opt = Adam::new(0.1, 0.01);
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Matrix::scalar(2.0));
        opt.step(&mut store, &grads);
        assert!((store.value("a").get(0, 0) - 0.9).abs() < 1e-9);
        assert_eq!(store.value("b").get(0, 0), 1.0);
    }

    #[test]
    fn clipping_bounds_the_update_direction_not_adam_magnitude() {
        let mut store = ParamStore::new();
        store.insert("a", Matrix::row_vector(&[0.0, 0.0]), ParamGroup::Main);
        let mut opt = Adam::new(0.1, 0.1).with_clip_norm(1.0);
        let mut grads = BTreeMap::new();
        grads.insert("a".to_string(), Matrix::row_vector(&[30.0, -40.0]));
        let norm = opt.step(&mut store, &grads);
        assert!((norm - 50.0).abs() < 1e-12);
        assert!(store.value("a").get(0, 0) < 0.0 && store.value("a").get(0, 1) > 0.0);
    }
}
