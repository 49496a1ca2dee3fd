//! Fully connected Q-network with tanh hidden layers, experience replay,
//! a quasi-static target copy, and RMSProp.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input, three hidden layers, output.
pub const LAYER_SIZES: [usize; 5] = [57, 200, 100, 40, 10];

pub const CHECKPOINT_FORMAT: &str = "powerctl-dqn";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learning hyper-parameters of the central trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    /// Discount factor.
    pub gamma: f64,
    pub batch_size: usize,
    /// Replay capacity per agent; total capacity is `n * memory_per_agent`.
    pub memory_per_agent: usize,
    pub lr0: f64,
    /// Per-slot multiplicative decay rate: `lr(t) = lr0 (1 - lr_decay)^t`.
    pub lr_decay: f64,
    pub eps0: f64,
    pub eps_min: f64,
    pub eps_decay: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Std of the truncated-normal weight initializer (truncated at 2 std).
    pub init_std: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            batch_size: 256,
            memory_per_agent: 1000,
            lr0: 5e-3,
            lr_decay: 1e-4,
            eps0: 0.2,
            eps_min: 1e-2,
            eps_decay: 1e-4,
            rms_decay: 0.9,
            rms_eps: 1e-10,
            init_std: 0.01,
            hidden: LAYER_SIZES[1..4].to_vec(),
        }
    }
}

impl TrainHyper {
    /// `(learning rate, exploration probability)` at training slot `t`.
    pub fn schedule(&self, t: u64) -> (f64, f64) {
        let t = t as f64;
        let lr = self.lr0 * (1.0 - self.lr_decay).powf(t);
        let eps = (self.eps0 * (1.0 - self.eps_decay).powf(t)).max(self.eps_min);
        (lr, eps)
    }

    pub fn layer_sizes(&self, n_inputs: usize, n_actions: usize) -> Vec<usize> {
        let mut sizes = vec![n_inputs];
        sizes.extend(&self.hidden);
        sizes.push(n_actions);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of the Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

fn truncated_normal<R: Rng + ?Sized>(std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self { layers }
    }

    /// Truncated-normal weights, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(sizes);
        for layer in &mut p.layers {
            layer.weights.mapv_inplace(|_| truncated_normal(std, rng));
        }
        p
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].weights.nrows()];
        s.extend(self.layers.iter().map(|l| l.weights.ncols()));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    /// Flattened parameters, layer by layer: weights row-major, then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn from_flat(sizes: &[usize], flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(sizes);
        if flat.len() != p.n_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for layers {sizes:?}, got {}",
                p.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut p.layers {
            l.weights.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(p)
    }

    /// Q-values of a single state.
    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch { expected: self.n_inputs(), actual: s.len() });
        }
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let x = ArrayView2::from_shape((1, s.len()), s).expect("row view");
        Ok(self.forward_batch(x).into_raw_vec_and_offset().0)
    }

    /// Q-values for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        a
    }

    /// Forward pass keeping every layer's activations (input first).
    fn forward_trace(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&l.weights);
            z += &l.bias;
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    fn zip_apply(&mut self, other: &MlpParams, mut f: impl FnMut(&mut f64, f64)) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weights.zip_mut_with(&o.weights, |a, &b| f(a, b));
            l.bias.zip_mut_with(&o.bias, |a, &b| f(a, b));
        }
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights *= c;
            l.bias *= c;
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = k;
        }
    }
    best
}

/// `r + gamma * max_a' q(s', a'; target)`.
pub fn td_target(r: f64, s_next: &[f64], target: &MlpParams, gamma: f64) -> Result<f64> {
    let q = target.forward(s_next)?;
    Ok(r + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
}

fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, width: usize) -> Array2<f64> {
    let n = rows.len();
    let mut m = Array2::zeros((n, width));
    for (mut row, src) in m.rows_mut().into_iter().zip(rows) {
        row.as_slice_mut().unwrap().copy_from_slice(src);
    }
    m
}

/// Summed squared TD error over the batch and its gradient with respect to
/// the train parameters; the target parameters are held constant.
pub fn loss_and_grad(
    train: &MlpParams,
    batch: &[&Experience],
    target: &MlpParams,
    gamma: f64,
) -> Result<(f64, MlpParams)> {
    if batch.is_empty() {
        return Err(Error::EmptySample);
    }
    let width = train.n_inputs();
    let n_out = train.n_outputs();
    if let Some(e) = batch.iter().find(|e| e.s.len() != width || e.s_next.len() != width || e.a >= n_out) {
        return Err(Error::DimensionMismatch {
            expected: width,
            actual: if e.a >= n_out { e.a } else { e.s.len() },
        });
    }
    let s = stack_rows(batch.iter().map(|e| e.s.as_slice()), width);
    let s_next = stack_rows(batch.iter().map(|e| e.s_next.as_slice()), width);
    let q_next = target.forward_batch(s_next.view());
    let acts = train.forward_trace(s);
    let q = acts.last().unwrap();

    let mut loss = 0.0;
    let mut delta = Array2::zeros((batch.len(), n_out));
    for (k, e) in batch.iter().enumerate() {
        let best_next = q_next.row(k).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let y = e.r + gamma * best_next;
        let err = y - q[[k, e.a]];
        loss += err * err;
        delta[[k, e.a]] = -2.0 * err;
    }

    let mut grad = MlpParams::zeros(&train.sizes());
    for l in (0..train.layers.len()).rev() {
        grad.layers[l].weights = acts[l].t().dot(&delta);
        grad.layers[l].bias = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&train.layers[l].weights.t());
            back.zip_mut_with(&acts[l], |d, &a| *d *= 1.0 - a * a);
            delta = back;
        }
    }
    Ok((loss, grad))
}

/// RMSProp: `v <- d v + (1 - d) g^2`, `theta <- theta - lr g / (sqrt(v) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub decay: f64,
    pub eps: f64,
    pub mean_square: MlpParams,
}

impl RmsProp {
    pub fn new(sizes: &[usize], decay: f64, eps: f64) -> Self {
        Self { decay, eps, mean_square: MlpParams::zeros(sizes) }
    }

    pub fn step(&mut self, params: &mut MlpParams, grad: &MlpParams, lr: f64) {
        let d = self.decay;
        self.mean_square.zip_apply(grad, |v, g| *v = d * *v + (1.0 - d) * g * g);
        let eps = self.eps;
        for ((p, g), v) in params.layers.iter_mut().zip(&grad.layers).zip(&self.mean_square.layers) {
            ndarray::Zip::from(&mut p.weights)
                .and(&g.weights)
                .and(&v.weights)
                .for_each(|p, &g, &v| *p -= lr * g / (v.sqrt() + eps));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&v.bias)
                .for_each(|p, &g, &v| *p -= lr * g / (v.sqrt() + eps));
        }
    }
}

/// FIFO replay memory.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    buf: VecDeque<Experience>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self { buf: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.buf.iter()
    }

    /// Indices of a uniform minibatch: without replacement when the memory
    /// holds at least `size` items, with replacement otherwise.
    pub fn sample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<usize>> {
        let len = self.buf.len();
        if len == 0 {
            return Err(Error::EmptyMemory);
        }
        if len >= size {
            Ok(index::sample(rng, len, size).into_vec())
        } else {
            Ok((0..size).map(|_| rng.random_range(0..len)).collect())
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        Ok(self.sample_indices(size, rng)?.into_iter().map(|i| &self.buf[i]).collect())
    }
}

/// Train network, its quasi-static target copy, and optimizer state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub train: MlpParams,
    pub target: MlpParams,
    pub optimizer: RmsProp,
    pub gamma: f64,
}

impl Learner {
    pub fn new(params: MlpParams, hyper: &TrainHyper) -> Self {
        let optimizer = RmsProp::new(&params.sizes(), hyper.rms_decay, hyper.rms_eps);
        Self { target: params.clone(), train: params, optimizer, gamma: hyper.gamma }
    }

    /// One optimizer step on `batch`; returns the batch loss before the step.
    pub fn train_step(&mut self, batch: &[&Experience], lr: f64) -> Result<f64> {
        let (loss, grad) = loss_and_grad(&self.train, batch, &self.target, self.gamma)?;
        self.optimizer.step(&mut self.train, &grad, lr);
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.train.clone();
    }
}

/// Version-tagged checkpoint: layer shapes plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
    /// Free-form provenance (run config, seed, slots trained).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_params(params: &MlpParams, meta: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layer_sizes: params.sizes(),
            params: params.to_flat(),
            meta,
        }
    }

    pub fn to_params(&self) -> Result<MlpParams> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.layer_sizes.len() < 2 {
            return Err(Error::Checkpoint("need at least two layer sizes".into()));
        }
        let p = MlpParams::from_flat(&self.layer_sizes, &self.params)?;
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(p)
    }

    /// Parameters, checked against the layer shape the caller expects.
    pub fn to_params_with_shape(&self, sizes: &[usize]) -> Result<MlpParams> {
        if self.layer_sizes != sizes {
            return Err(Error::Checkpoint(format!(
                "layer shape {:?} does not match expected {sizes:?}",
                self.layer_sizes
            )));
        }
        self.to_params()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}
