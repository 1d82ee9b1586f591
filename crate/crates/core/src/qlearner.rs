//! Minimal deep Q-learning stack.
//!
//! A feed-forward Q-network (two rectified hidden layers, linear output),
//! an experience replay ring, a target network, epsilon-greedy action
//! selection, and one-step TD training with plain SGD and gradient-norm
//! clipping. Backpropagation is hand-rolled and checked against central
//! finite differences in the tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;

#[derive(Debug, Error)]
pub enum QError {
    #[error("input length {got} does not match network input_dim {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("no legal action: the mask excludes every index")]
    EmptyMask,
    #[error("non-finite loss ({0}); aborting training step")]
    NonFiniteLoss(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("requested batch of {want} from buffer of {have}")]
    BufferTooSmall { want: usize, have: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
}

/// Gradient-norm clip applied to every training step.
pub const GRAD_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Uniform fan-in initialization, seeded per layer for reproducibility.
    fn init(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward Q-function approximator: `input -> h1 -> h2 -> output`,
/// rectifier on the hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub output_dim: usize,
    layers: Vec<DenseLayer>,
}

impl QNetwork {
    pub fn new(input_dim: usize, hidden1: usize, hidden2: usize, output_dim: usize, seed: u64) -> Self {
        let layers = vec![
            DenseLayer::init(input_dim, hidden1, derive_seed(seed, 1)),
            DenseLayer::init(hidden1, hidden2, derive_seed(seed, 2)),
            DenseLayer::init(hidden2, output_dim, derive_seed(seed, 3)),
        ];
        Self {
            input_dim,
            hidden1,
            hidden2,
            output_dim,
            layers,
        }
    }

    pub fn layer(&self, idx: usize) -> &DenseLayer {
        &self.layers[idx]
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut DenseLayer {
        &mut self.layers[idx]
    }

    /// Deterministic forward pass; returns `output_dim` q-values.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, QError> {
        if x.len() != self.input_dim {
            return Err(QError::DimMismatch {
                got: x.len(),
                want: self.input_dim,
            });
        }
        let mut cur = Vec::new();
        self.layers[0].affine(x, &mut cur);
        relu_inplace(&mut cur);
        let mut next = Vec::new();
        self.layers[1].affine(&cur, &mut next);
        relu_inplace(&mut next);
        self.layers[2].affine(&next, &mut cur);
        Ok(cur)
    }

    /// Forward pass that keeps the hidden activations for backprop.
    fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        let mut z1 = Vec::new();
        self.layers[0].affine(x, &mut z1);
        let mut h1 = z1.clone();
        relu_inplace(&mut h1);
        let mut z2 = Vec::new();
        self.layers[1].affine(&h1, &mut z2);
        let mut h2 = z2.clone();
        relu_inplace(&mut h2);
        let mut out = Vec::new();
        self.layers[2].affine(&h2, &mut out);
        ForwardCache { z1, h1, z2, h2, out }
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Read one parameter by flattened index (weights then bias, per layer).
    pub fn get_param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for l in &self.layers {
            if i < l.weights.len() {
                return l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        for l in &mut self.layers {
            if i < l.weights.len() {
                l.weights[i] = value;
                return;
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                l.bias[i] = value;
                return;
            }
            i -= l.bias.len();
        }
        panic!("parameter index {idx} out of range");
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

struct ForwardCache {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    out: Vec<f64>,
}

/// Copy the online network's weights into the target network (bit-identical).
pub fn sync_target(net: &QNetwork, target: &mut QNetwork) {
    target.clone_from(net);
}

/// One stored experience at the feature level.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    /// Legality of each action in the next state, used by the bootstrap max.
    pub next_mask: Vec<bool>,
}

/// One-step bootstrapped return: `r` if terminal, otherwise
/// `r + gamma * max over unmasked a' of Q_target(next)[a']`. A next state
/// with every action masked is treated as terminal.
pub fn td_target(t: &Transition, target_net: &QNetwork, gamma: f64) -> Result<f64, QError> {
    if t.terminal {
        return Ok(t.reward);
    }
    if gamma == 0.0 {
        return Ok(t.reward);
    }
    let q = target_net.forward(&t.next_state)?;
    let best = q
        .iter()
        .zip(&t.next_mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return Ok(t.reward);
    }
    Ok(t.reward + gamma * best)
}

/// Per-layer parameter gradients in the same layout as the network.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(net: &QNetwork) -> Self {
        Self {
            d_weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            d_bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Flattened view matching `QNetwork::get_param` indexing.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.d_weights.iter().zip(&self.d_bias) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v
    }

    fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    fn scale(&mut self, k: f64) {
        for w in &mut self.d_weights {
            for g in w {
                *g *= k;
            }
        }
        for b in &mut self.d_bias {
            for g in b {
                *g *= k;
            }
        }
    }
}

/// Mean-squared TD error and its gradient over a batch with fixed targets.
pub fn compute_gradients(
    net: &QNetwork,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, Gradients), QError> {
    if batch.is_empty() {
        return Err(QError::EmptyBatch);
    }
    debug_assert_eq!(batch.len(), targets.len());
    let b = batch.len() as f64;
    let mut grads = Gradients::zeros(net);
    let mut loss = 0.0;

    for (t, &y) in batch.iter().zip(targets) {
        if t.state.len() != net.input_dim {
            return Err(QError::DimMismatch {
                got: t.state.len(),
                want: net.input_dim,
            });
        }
        debug_assert!(t.action < net.output_dim);
        let cache = net.forward_cached(&t.state);
        let err = cache.out[t.action] - y;
        loss += err * err / b;

        // d loss / d out: only the taken action's head carries error.
        let mut delta_out = vec![0.0; net.output_dim];
        delta_out[t.action] = 2.0 * err / b;

        // Output layer.
        let l2 = &net.layers[2];
        for o in 0..l2.out_dim {
            let d = delta_out[o];
            if d == 0.0 {
                continue;
            }
            grads.d_bias[2][o] += d;
            for h in 0..l2.in_dim {
                grads.d_weights[2][o * l2.in_dim + h] += d * cache.h2[h];
            }
        }
        // Backprop into h2 then through the rectifier.
        let mut delta_h2 = vec![0.0; l2.in_dim];
        for o in 0..l2.out_dim {
            let d = delta_out[o];
            if d == 0.0 {
                continue;
            }
            for h in 0..l2.in_dim {
                delta_h2[h] += d * l2.weights[o * l2.in_dim + h];
            }
        }
        for (dz, &z) in delta_h2.iter_mut().zip(&cache.z2) {
            if z <= 0.0 {
                *dz = 0.0;
            }
        }

        // Hidden layer 2.
        let l1 = &net.layers[1];
        for o in 0..l1.out_dim {
            let d = delta_h2[o];
            if d == 0.0 {
                continue;
            }
            grads.d_bias[1][o] += d;
            for h in 0..l1.in_dim {
                grads.d_weights[1][o * l1.in_dim + h] += d * cache.h1[h];
            }
        }
        let mut delta_h1 = vec![0.0; l1.in_dim];
        for o in 0..l1.out_dim {
            let d = delta_h2[o];
            if d == 0.0 {
                continue;
            }
            for h in 0..l1.in_dim {
                delta_h1[h] += d * l1.weights[o * l1.in_dim + h];
            }
        }
        for (dz, &z) in delta_h1.iter_mut().zip(&cache.z1) {
            if z <= 0.0 {
                *dz = 0.0;
            }
        }

        // Input layer.
        let l0 = &net.layers[0];
        for o in 0..l0.out_dim {
            let d = delta_h1[o];
            if d == 0.0 {
                continue;
            }
            grads.d_bias[0][o] += d;
            for h in 0..l0.in_dim {
                grads.d_weights[0][o * l0.in_dim + h] += d * t.state[h];
            }
        }
    }
    Ok((loss, grads))
}

/// Mean-squared TD error (no gradients); used by the finite-difference tests.
pub fn batch_loss(net: &QNetwork, batch: &[&Transition], targets: &[f64]) -> Result<f64, QError> {
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let q = net.forward(&t.state)?;
        let err = q[t.action] - y;
        loss += err * err / b;
    }
    Ok(loss)
}

pub fn td_targets(
    batch: &[&Transition],
    target_net: &QNetwork,
    gamma: f64,
) -> Result<Vec<f64>, QError> {
    batch.iter().map(|t| td_target(t, target_net, gamma)).collect()
}

/// One SGD step on the mean-squared TD error. Returns the pre-step loss.
pub fn train_step(
    net: &mut QNetwork,
    target_net: &QNetwork,
    batch: &[&Transition],
    config: &LearnerConfig,
) -> Result<f64, QError> {
    let targets = td_targets(batch, target_net, config.gamma)?;
    let (loss, mut grads) = compute_gradients(net, batch, &targets)?;
    if !loss.is_finite() {
        return Err(QError::NonFiniteLoss(loss));
    }
    let norm = grads.l2_norm();
    if norm > GRAD_CLIP {
        grads.scale(GRAD_CLIP / norm);
    }
    for (l, layer) in net.layers.iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grads.d_weights[l]) {
            *w -= config.learning_rate * g;
        }
        for (b, g) in layer.bias.iter_mut().zip(&grads.d_bias[l]) {
            *b -= config.learning_rate * g;
        }
    }
    Ok(loss)
}

/// Epsilon-greedy over masked q-values: with probability `eps` a uniform
/// legal action, otherwise the legal argmax (ties to the lowest index).
pub fn epsilon_greedy(
    q: &[f64],
    mask: &[bool],
    eps: f64,
    rng: &mut ChaCha20Rng,
) -> Result<usize, QError> {
    debug_assert_eq!(q.len(), mask.len());
    let legal: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect();
    if legal.is_empty() {
        return Err(QError::EmptyMask);
    }
    if eps > 0.0 && rng.random::<f64>() < eps {
        return Ok(legal[rng.random_range(0..legal.len())]);
    }
    let mut best = legal[0];
    for &i in &legal[1..] {
        if q[i] > q[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Fixed-capacity experience ring with uniform without-replacement sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample of `n` distinct transitions.
    pub fn sample(&self, n: usize, rng: &mut ChaCha20Rng) -> Result<Vec<&Transition>, QError> {
        if n > self.items.len() {
            return Err(QError::BufferTooSmall {
                want: n,
                have: self.items.len(),
            });
        }
        let idx = rand::seq::index::sample(rng, self.items.len(), n);
        Ok(idx.iter().map(|i| &self.items[i]).collect())
    }
}

/// Learner hyperparameters.
///
/// Defaults: gamma 0.99, learning rate 1e-3, batch 64, buffer 10k, target
/// sync every 500 training steps, epsilon linear 0.3 -> 0 over the first 80%
/// of training dialogues. Hidden sizes default per policy kind (130/50 for
/// the feudal sub-policies, 300/100 for the flat baselines) when unset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_sync_period: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Dialogues over which epsilon decays linearly; 0 means 80% of the
    /// configured number of training dialogues.
    pub eps_decay_dialogues: usize,
    /// Hidden layer sizes; None picks the policy-kind default.
    pub hidden: Option<(usize, usize)>,
    /// Gradient steps per sub-network at each dialogue end.
    pub train_steps_per_episode: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 64,
            buffer_capacity: 10_000,
            target_sync_period: 500,
            eps_start: 0.3,
            eps_end: 0.0,
            eps_decay_dialogues: 0,
            hidden: None,
            train_steps_per_episode: 8,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<(), QError> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(QError::InvalidConfig(format!(
                "gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(QError::InvalidConfig(
                "learning_rate, batch_size, and buffer_capacity must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn epsilon_at(&self, dialogue_idx: usize, n_train: usize) -> f64 {
        let decay = if self.eps_decay_dialogues > 0 {
            self.eps_decay_dialogues
        } else {
            ((n_train as f64) * 0.8).ceil() as usize
        };
        if decay == 0 || dialogue_idx >= decay {
            return self.eps_end;
        }
        let f = dialogue_idx as f64 / decay as f64;
        self.eps_start + (self.eps_end - self.eps_start) * f
    }
}
