//! Feed-forward networks with batch normalization, exact backpropagation,
//! an adaptive-moment optimizer and Polyak target blending.
//!
//! Batches are row-major in the statistical sense: one sample per row.
//! Every parameter lives in a `DMatrix<f64>` block; biases and per-feature
//! vectors are `1 × d` rows so they broadcast over the batch.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Batch = DMatrix<f64>;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPS: f64 = 1e-5;
pub const FINAL_LAYER_INIT: f64 = 3e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network needs at least two layer sizes")]
    TooFewLayers,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch normalization in train mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("cache does not belong to this network")]
    StaleCache,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("architecture mismatch: {0}")]
    Architecture(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch-norm layers.
    Train,
    /// Running statistics; never changes the network.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: DMatrix<f64>,
    /// `1 × out`
    pub bias: DMatrix<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DMatrix::zeros(1, outputs),
        }
    }

    /// Weights and biases uniform in `[-scale, scale]`.
    pub fn uniform(inputs: usize, outputs: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut sample = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..=scale));
        let weight = sample(outputs, inputs);
        let bias = sample(1, outputs);
        Dense { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub running_mean: DMatrix<f64>,
    pub running_var: DMatrix<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: DMatrix::from_element(1, dim, 1.0),
            beta: DMatrix::zeros(1, dim),
            running_mean: DMatrix::zeros(1, dim),
            running_var: DMatrix::from_element(1, dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Relu,
    Tanh,
    /// Multiplies by a fixed constant (used to map `tanh` onto the action bound).
    Scale(f64),
}

/// Shape-only description of a layer, enough to rebuild a network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc {
    Dense { inputs: usize, outputs: usize },
    BatchNorm { dim: usize },
    Relu,
    Tanh,
    Scale(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    x_hat: Batch,
    inv_std: DMatrix<f64>,
    mean: DMatrix<f64>,
    var: DMatrix<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Cache {
    mode: Mode,
    signature: Vec<LayerDesc>,
    /// Input of every layer, plus the final output.
    activations: Vec<Batch>,
    bn: Vec<Option<BnCache>>,
}

impl Cache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn output(&self) -> &Batch {
        self.activations.last().expect("cache always holds the input")
    }
}

/// Access to parameter blocks in a fixed order.
pub trait Parametric {
    /// Blocks updated by the optimizer.
    fn trainable(&self) -> Vec<&DMatrix<f64>>;
    fn trainable_mut(&mut self) -> Vec<&mut DMatrix<f64>>;
    /// Trainable blocks followed by non-trainable state (running statistics).
    fn all_blocks(&self) -> Vec<&DMatrix<f64>>;
    fn all_blocks_mut(&mut self) -> Vec<&mut DMatrix<f64>>;
    /// Human-readable names of `all_blocks`, same order.
    fn block_names(&self) -> Vec<String>;

    fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|b| b.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.all_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    Linear,
    /// `bound · tanh(z)`
    BoundedTanh(f64),
}

/// Recipe for a stack of dense layers with optional batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub normalize_input: bool,
    pub normalize_hidden: bool,
    /// Apply the hidden nonlinearity after the last dense layer too (used by
    /// the critic's state pathway, which feeds another network).
    pub activate_last: bool,
    pub output: OutputActivation,
    /// Uniform half-width of the final dense layer's initial parameters;
    /// `None` uses the fan-in rule like the hidden layers.
    pub final_init: Option<f64>,
}

impl MlpSpec {
    pub fn plain(sizes: &[usize]) -> Self {
        MlpSpec {
            sizes: sizes.to_vec(),
            normalize_input: false,
            normalize_hidden: false,
            activate_last: false,
            output: OutputActivation::Linear,
            final_init: Some(FINAL_LAYER_INIT),
        }
    }
}

/// Plain rectifier network `sizes[0] → … → sizes[n-1]` with a linear output.
pub fn init_mlp(sizes: &[usize], seed: u64) -> Result<Mlp, NnError> {
    Mlp::build(&MlpSpec::plain(sizes), &mut ChaCha8Rng::seed_from_u64(seed))
}

impl Mlp {
    /// Hidden layers draw from `U[-1/√fan_in, 1/√fan_in]`; the final layer
    /// from `spec.final_init`.
    pub fn build(spec: &MlpSpec, rng: &mut impl Rng) -> Result<Mlp, NnError> {
        if spec.sizes.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        if spec.sizes.contains(&0) {
            return Err(NnError::Shape("layer sizes must be positive".into()));
        }
        let mut layers = Vec::new();
        if spec.normalize_input {
            layers.push(Layer::BatchNorm(BatchNorm::new(spec.sizes[0])));
        }
        let n = spec.sizes.len() - 1;
        for (i, w) in spec.sizes.windows(2).enumerate() {
            let last = i + 1 == n;
            let scale = match (last, spec.final_init) {
                (true, Some(s)) => s,
                _ => 1.0 / (w[0] as f64).sqrt(),
            };
            layers.push(Layer::Dense(Dense::uniform(w[0], w[1], scale, rng)));
            if !last || spec.activate_last {
                if spec.normalize_hidden {
                    layers.push(Layer::BatchNorm(BatchNorm::new(w[1])));
                }
                layers.push(Layer::Relu);
            }
        }
        if let OutputActivation::BoundedTanh(bound) = spec.output {
            layers.push(Layer::Tanh);
            layers.push(Layer::Scale(bound));
        }
        Ok(Mlp { layers })
    }

    pub fn from_desc(desc: &[LayerDesc]) -> Mlp {
        let layers = desc
            .iter()
            .map(|d| match *d {
                LayerDesc::Dense { inputs, outputs } => Layer::Dense(Dense::zeros(inputs, outputs)),
                LayerDesc::BatchNorm { dim } => Layer::BatchNorm(BatchNorm::new(dim)),
                LayerDesc::Relu => Layer::Relu,
                LayerDesc::Tanh => Layer::Tanh,
                LayerDesc::Scale(s) => Layer::Scale(s),
            })
            .collect();
        Mlp { layers }
    }

    pub fn describe(&self) -> Vec<LayerDesc> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => LayerDesc::Dense {
                    inputs: d.inputs(),
                    outputs: d.outputs(),
                },
                Layer::BatchNorm(b) => LayerDesc::BatchNorm { dim: b.dim() },
                Layer::Relu => LayerDesc::Relu,
                Layer::Tanh => LayerDesc::Tanh,
                Layer::Scale(s) => LayerDesc::Scale(*s),
            })
            .collect()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.inputs()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.outputs()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn dense_layers(&self) -> impl Iterator<Item = &Dense> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Dense(d) => Some(d),
            _ => None,
        })
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    /// Pure forward pass. In train mode the batch statistics are returned in
    /// the cache but the running statistics are left untouched; see
    /// [`Mlp::forward_train`].
    pub fn forward(&self, input: &Batch, mode: Mode) -> Result<(Batch, Cache), NnError> {
        if let Some(d) = self.input_dim() {
            if input.ncols() != d {
                return Err(NnError::Shape(format!("input has {} columns, network expects {d}", input.ncols())));
            }
        }
        if mode == Mode::Train && self.has_batch_norm() && input.nrows() < 2 {
            return Err(NnError::BatchTooSmall(input.nrows()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut bn = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let (y, cache) = match layer {
                Layer::Dense(d) => {
                    let mut y = x * d.weight.transpose();
                    for mut row in y.row_iter_mut() {
                        row += &d.bias;
                    }
                    (y, None)
                }
                Layer::BatchNorm(b) => {
                    let (mean, var) = match mode {
                        Mode::Train => column_moments(x),
                        Mode::Eval => (b.running_mean.clone(), b.running_var.clone()),
                    };
                    let inv_std = var.map(|v| 1.0 / (v + BN_EPS).sqrt());
                    let mut x_hat = x.clone();
                    for mut row in x_hat.row_iter_mut() {
                        row -= &mean;
                        row.component_mul_assign(&inv_std);
                    }
                    let mut y = x_hat.clone();
                    for mut row in y.row_iter_mut() {
                        row.component_mul_assign(&b.gamma);
                        row += &b.beta;
                    }
                    (
                        y,
                        Some(BnCache {
                            x_hat,
                            inv_std,
                            mean,
                            var,
                        }),
                    )
                }
                Layer::Relu => (x.map(|v| v.max(0.0)), None),
                Layer::Tanh => (x.map(f64::tanh), None),
                Layer::Scale(s) => (x * *s, None),
            };
            activations.push(y);
            bn.push(cache);
        }
        let out = activations.last().unwrap().clone();
        Ok((
            out,
            Cache {
                mode,
                signature: self.describe(),
                activations,
                bn,
            },
        ))
    }

    /// Train-mode forward pass that also folds the batch statistics into the
    /// running statistics (`running ← m·running + (1-m)·batch`, unbiased variance).
    pub fn forward_train(&mut self, input: &Batch) -> Result<(Batch, Cache), NnError> {
        let (out, cache) = self.forward(input, Mode::Train)?;
        self.absorb_statistics(&cache)?;
        Ok((out, cache))
    }

    pub fn absorb_statistics(&mut self, cache: &Cache) -> Result<(), NnError> {
        if cache.signature != self.describe() {
            return Err(NnError::StaleCache);
        }
        if cache.mode != Mode::Train {
            return Ok(());
        }
        let n = cache.activations[0].nrows() as f64;
        let correction = n / (n - 1.0);
        for (layer, c) in self.layers.iter_mut().zip(&cache.bn) {
            if let (Layer::BatchNorm(b), Some(c)) = (layer, c) {
                b.running_mean = &b.running_mean * BN_MOMENTUM + &c.mean * (1.0 - BN_MOMENTUM);
                b.running_var = &b.running_var * BN_MOMENTUM + &c.var * ((1.0 - BN_MOMENTUM) * correction);
            }
        }
        Ok(())
    }

    /// Gradients of `sum(output ⊙ output_grad)` with respect to every
    /// trainable block (in [`Parametric::trainable`] order) and the input.
    pub fn backward(&self, cache: &Cache, output_grad: &Batch) -> Result<(Vec<DMatrix<f64>>, Batch), NnError> {
        if cache.signature != self.describe() {
            return Err(NnError::StaleCache);
        }
        let out = cache.output();
        if output_grad.shape() != out.shape() {
            return Err(NnError::Shape(format!(
                "output gradient is {:?}, output is {:?}",
                output_grad.shape(),
                out.shape()
            )));
        }
        let mut grads_rev: Vec<DMatrix<f64>> = Vec::new();
        let mut g = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.activations[i];
            let y = &cache.activations[i + 1];
            g = match layer {
                Layer::Dense(d) => {
                    let dw = g.transpose() * x;
                    let db = column_sums(&g);
                    grads_rev.push(db);
                    grads_rev.push(dw);
                    &g * &d.weight
                }
                Layer::BatchNorm(b) => {
                    let c = cache.bn[i].as_ref().ok_or(NnError::StaleCache)?;
                    let dgamma = column_sums(&g.component_mul(&c.x_hat));
                    let dbeta = column_sums(&g);
                    let mut dx_hat = g.clone();
                    for mut row in dx_hat.row_iter_mut() {
                        row.component_mul_assign(&b.gamma);
                    }
                    let dx = match cache.mode {
                        Mode::Eval => {
                            let mut dx = dx_hat;
                            for mut row in dx.row_iter_mut() {
                                row.component_mul_assign(&c.inv_std);
                            }
                            dx
                        }
                        Mode::Train => {
                            // dx = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂⊙x̂))
                            let n = dx_hat.nrows() as f64;
                            let sum = column_sums(&dx_hat);
                            let sum_xhat = column_sums(&dx_hat.component_mul(&c.x_hat));
                            let mut dx = dx_hat * n;
                            for (mut row, xh) in dx.row_iter_mut().zip(c.x_hat.row_iter()) {
                                row -= &sum;
                                row -= xh.component_mul(&sum_xhat);
                                row.component_mul_assign(&c.inv_std);
                            }
                            dx / n
                        }
                    };
                    grads_rev.push(dbeta);
                    grads_rev.push(dgamma);
                    dx
                }
                Layer::Relu => g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
                Layer::Tanh => g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)),
                Layer::Scale(s) => g * *s,
            };
        }
        grads_rev.reverse();
        Ok((grads_rev, g))
    }
}

impl Parametric for Mlp {
    fn trainable(&self) -> Vec<&DMatrix<f64>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Dense(d) => vec![&d.weight, &d.bias],
                Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
                _ => vec![],
            })
            .collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
                Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
                _ => vec![],
            })
            .collect()
    }

    fn all_blocks(&self) -> Vec<&DMatrix<f64>> {
        let mut blocks = self.trainable();
        for l in &self.layers {
            if let Layer::BatchNorm(b) = l {
                blocks.push(&b.running_mean);
                blocks.push(&b.running_var);
            }
        }
        blocks
    }

    fn all_blocks_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut trainable = Vec::new();
        let mut stats = Vec::new();
        for l in self.layers.iter_mut() {
            match l {
                Layer::Dense(d) => {
                    trainable.push(&mut d.weight);
                    trainable.push(&mut d.bias);
                }
                Layer::BatchNorm(b) => {
                    trainable.push(&mut b.gamma);
                    trainable.push(&mut b.beta);
                    stats.push(&mut b.running_mean);
                    stats.push(&mut b.running_var);
                }
                _ => {}
            }
        }
        trainable.extend(stats);
        trainable
    }

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        let mut stats = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l {
                Layer::Dense(_) => {
                    names.push(format!("layer {i} weight"));
                    names.push(format!("layer {i} bias"));
                }
                Layer::BatchNorm(_) => {
                    names.push(format!("layer {i} bn scale"));
                    names.push(format!("layer {i} bn shift"));
                    stats.push(format!("layer {i} running mean"));
                    stats.push(format!("layer {i} running variance"));
                }
                _ => {}
            }
        }
        names.extend(stats);
        names
    }
}

fn column_sums(x: &Batch) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(1, x.ncols());
    for row in x.row_iter() {
        s += row;
    }
    s
}

/// Per-column mean and biased variance.
fn column_moments(x: &Batch) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = column_sums(x) / n;
    let mut var = DMatrix::zeros(1, x.ncols());
    for row in x.row_iter() {
        let d = row - &mean;
        var += d.component_mul(&d);
    }
    (mean, var / n)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<DMatrix<f64>>,
    pub second: Vec<DMatrix<f64>>,
}

impl Adam {
    pub fn new(net: &impl Parametric, lr: f64) -> Self {
        let zeros: Vec<_> = net.trainable().iter().map(|b| DMatrix::zeros(b.nrows(), b.ncols())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn apply(&mut self, net: &mut impl Parametric, grads: &[DMatrix<f64>]) -> Result<(), NnError> {
        let names = net.block_names();
        {
            let params = net.trainable();
            if params.len() != grads.len() || params.len() != self.first.len() {
                return Err(NnError::Shape(format!(
                    "{} parameter blocks, {} gradient blocks, {} optimizer blocks",
                    params.len(),
                    grads.len(),
                    self.first.len()
                )));
            }
            for (i, (p, g)) in params.iter().zip(grads).enumerate() {
                if p.shape() != g.shape() || self.first[i].shape() != p.shape() {
                    return Err(NnError::Shape(format!("block {}", names[i])));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFiniteGradient(names[i].clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, p) in net.trainable_mut().into_iter().enumerate() {
            let g = &grads[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn check_same_architecture(a: &impl Parametric, b: &impl Parametric) -> Result<(), NnError> {
    let (x, y) = (a.all_blocks(), b.all_blocks());
    if x.len() != y.len() || x.iter().zip(&y).any(|(p, q)| p.shape() != q.shape()) {
        return Err(NnError::Architecture("target and source differ in block layout".into()));
    }
    Ok(())
}

/// `target ← τ·source + (1-τ)·target` over every block, running statistics included.
pub fn soft_update<P: Parametric>(target: &mut P, source: &P, tau: f64) -> Result<(), NnError> {
    check_same_architecture(target, source)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(NnError::Architecture(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, s) in target.all_blocks_mut().into_iter().zip(source.all_blocks()) {
        t.zip_apply(s, |tv, sv| *tv = tau * sv + (1.0 - tau) * *tv);
    }
    Ok(())
}

/// Action-value network: a state pathway whose features are concatenated
/// with the action and passed through a head producing a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub state_path: Mlp,
    pub head: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticCache {
    state: Cache,
    head: Cache,
    feature_dim: usize,
}

impl Critic {
    /// `obs → state_width` (batch-normalized when `batch_norm`), then
    /// `[features, action] → head_width → 1`.
    pub fn build(
        obs_dim: usize,
        act_dim: usize,
        state_width: usize,
        head_width: usize,
        batch_norm: bool,
        rng: &mut impl Rng,
    ) -> Result<Critic, NnError> {
        let state_path = Mlp::build(
            &MlpSpec {
                sizes: vec![obs_dim, state_width],
                normalize_input: batch_norm,
                normalize_hidden: batch_norm,
                activate_last: true,
                output: OutputActivation::Linear,
                final_init: None,
            },
            rng,
        )?;
        let head = Mlp::build(
            &MlpSpec {
                sizes: vec![state_width + act_dim, head_width, 1],
                normalize_input: false,
                normalize_hidden: false,
                activate_last: false,
                output: OutputActivation::Linear,
                final_init: Some(FINAL_LAYER_INIT),
            },
            rng,
        )?;
        Ok(Critic { state_path, head })
    }

    pub fn feature_dim(&self) -> usize {
        self.state_path.output_dim().unwrap_or(0)
    }

    pub fn forward(&self, states: &Batch, actions: &Batch, mode: Mode) -> Result<(Batch, CriticCache), NnError> {
        if states.nrows() != actions.nrows() {
            return Err(NnError::Shape(format!(
                "{} states but {} actions",
                states.nrows(),
                actions.nrows()
            )));
        }
        let (features, state) = self.state_path.forward(states, mode)?;
        let joint = concat_columns(&features, actions);
        let (q, head) = self.head.forward(&joint, mode)?;
        Ok((
            q,
            CriticCache {
                state,
                head,
                feature_dim: features.ncols(),
            },
        ))
    }

    pub fn forward_train(&mut self, states: &Batch, actions: &Batch) -> Result<(Batch, CriticCache), NnError> {
        let (q, cache) = self.forward(states, actions, Mode::Train)?;
        self.state_path.absorb_statistics(&cache.state)?;
        self.head.absorb_statistics(&cache.head)?;
        Ok((q, cache))
    }

    /// Returns (parameter gradients, state gradient, action gradient).
    pub fn backward(&self, cache: &CriticCache, q_grad: &Batch) -> Result<(Vec<DMatrix<f64>>, Batch, Batch), NnError> {
        let (head_grads, joint_grad) = self.head.backward(&cache.head, q_grad)?;
        let f = cache.feature_dim;
        let feature_grad = joint_grad.columns(0, f).into_owned();
        let action_grad = joint_grad.columns(f, joint_grad.ncols() - f).into_owned();
        let (state_grads, state_input_grad) = self.state_path.backward(&cache.state, &feature_grad)?;
        let mut grads = state_grads;
        grads.extend(head_grads);
        Ok((grads, state_input_grad, action_grad))
    }
}

impl Parametric for Critic {
    fn trainable(&self) -> Vec<&DMatrix<f64>> {
        let mut v = self.state_path.trainable();
        v.extend(self.head.trainable());
        v
    }

    fn trainable_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let mut v = self.state_path.trainable_mut();
        v.extend(self.head.trainable_mut());
        v
    }

    fn all_blocks(&self) -> Vec<&DMatrix<f64>> {
        let mut v = self.trainable();
        let n_s = self.state_path.trainable().len();
        let n_h = self.head.trainable().len();
        v.extend(self.state_path.all_blocks().into_iter().skip(n_s));
        v.extend(self.head.all_blocks().into_iter().skip(n_h));
        v
    }

    fn all_blocks_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        let n_s = self.state_path.trainable().len();
        let n_h = self.head.trainable().len();
        let mut s_all = self.state_path.all_blocks_mut();
        let s_stats = s_all.split_off(n_s);
        let mut h_all = self.head.all_blocks_mut();
        let h_stats = h_all.split_off(n_h);
        let mut v = s_all;
        v.extend(h_all);
        v.extend(s_stats);
        v.extend(h_stats);
        v
    }

    fn block_names(&self) -> Vec<String> {
        let n_s = self.state_path.trainable().len();
        let n_h = self.head.trainable().len();
        let s: Vec<_> = self.state_path.block_names().into_iter().map(|n| format!("state path {n}")).collect();
        let h: Vec<_> = self.head.block_names().into_iter().map(|n| format!("head {n}")).collect();
        let mut v: Vec<String> = s[..n_s].to_vec();
        v.extend_from_slice(&h[..n_h]);
        v.extend_from_slice(&s[n_s..]);
        v.extend_from_slice(&h[n_h..]);
        v
    }
}

pub fn concat_columns(a: &Batch, b: &Batch) -> Batch {
    let mut out = Batch::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Stacks equally long rows into a batch.
pub fn batch_from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Batch {
    let cols = rows.first().map_or(0, |r| r.as_ref().len());
    Batch::from_fn(rows.len(), cols, |i, j| rows[i].as_ref()[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_layer(n: usize) -> Mlp {
        Mlp {
            layers: vec![Layer::Dense(Dense {
                weight: DMatrix::identity(n, n),
                bias: DMatrix::zeros(1, n),
            })],
        }
    }

    #[test]
    fn init_is_deterministic_and_chains_shapes() {
        let a = init_mlp(&[12, 64, 64, 4], 9).unwrap();
        assert_eq!(a, init_mlp(&[12, 64, 64, 4], 9).unwrap());
        assert_ne!(a, init_mlp(&[12, 64, 64, 4], 10).unwrap());
        let shapes: Vec<_> = a.dense_layers().map(|d| d.weight.shape()).collect();
        assert_eq!(shapes, vec![(64, 12), (64, 64), (4, 64)]);
    }

    #[test]
    fn init_ranges() {
        let net = init_mlp(&[12, 64, 64, 4], 1).unwrap();
        let dense: Vec<_> = net.dense_layers().collect();
        let last = dense.last().unwrap();
        assert!(last.weight.iter().chain(last.bias.iter()).all(|w| w.abs() <= FINAL_LAYER_INIT));
        let bound = 1.0 / 12f64.sqrt();
        assert!(dense[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(dense[0].weight.iter().any(|w| w.abs() > FINAL_LAYER_INIT));
    }

    #[test]
    fn rejects_short_size_lists() {
        assert_eq!(init_mlp(&[3], 0), Err(NnError::TooFewLayers));
        assert_eq!(init_mlp(&[], 0), Err(NnError::TooFewLayers));
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let net = identity_layer(3);
        let x = batch_from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]);
        let (y, _) = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = identity_layer(3);
        let x = batch_from_rows(&[[1.0, 2.0]]);
        assert!(matches!(net.forward(&x, Mode::Eval), Err(NnError::Shape(_))));
    }

    #[test]
    fn train_batch_norm_standardizes() {
        let mut net = Mlp {
            layers: vec![Layer::BatchNorm(BatchNorm::new(3))],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Batch::from_fn(16, 3, |_, j| rng.random_range(-5.0..5.0) * (j + 1) as f64 + 7.0);
        let (y, _) = net.forward_train(&x).unwrap();
        let (mean, var) = column_moments(&y);
        assert!(mean.iter().all(|m| m.abs() < 1e-6));
        assert!(var.iter().all(|v| (v - 1.0).abs() < 1e-4));
        if let Layer::BatchNorm(b) = &net.layers[0] {
            assert!(b.running_mean.iter().all(|m| *m != 0.0));
        }
    }

    #[test]
    fn batch_norm_train_needs_two_samples() {
        let net = Mlp {
            layers: vec![Layer::BatchNorm(BatchNorm::new(2))],
        };
        let x = batch_from_rows(&[[1.0, 2.0]]);
        assert_eq!(net.forward(&x, Mode::Train).unwrap_err(), NnError::BatchTooSmall(1));
        assert!(net.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_forward_is_pure() {
        let net = Mlp::build(
            &MlpSpec {
                sizes: vec![4, 8, 2],
                normalize_input: true,
                normalize_hidden: true,
                activate_last: false,
                output: OutputActivation::BoundedTanh(3.0),
                final_init: Some(FINAL_LAYER_INIT),
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let before = net.clone();
        let x = batch_from_rows(&[[0.1, 0.2, 0.3, 0.4]]);
        let (a, _) = net.forward(&x, Mode::Eval).unwrap();
        let (b, _) = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
        assert!(a.iter().all(|v| v.abs() <= 3.0));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let net = init_mlp(&[3, 5, 2], 4).unwrap();
        let x = batch_from_rows(&[[0.5, -0.2, 0.9], [0.1, 0.3, -0.7]]);
        let (_, cache) = net.forward(&x, Mode::Train).unwrap();
        let (grads, dx) = net.backward(&cache, &Batch::zeros(2, 2)).unwrap();
        assert!(grads.iter().all(|g| g.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_input_gradient_is_transpose_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dense = Dense::uniform(3, 2, 1.0, &mut rng);
        let w = dense.weight.clone();
        let net = Mlp {
            layers: vec![Layer::Dense(dense)],
        };
        let x = batch_from_rows(&[[0.5, -0.2, 0.9]]);
        let (_, cache) = net.forward(&x, Mode::Eval).unwrap();
        let g = batch_from_rows(&[[1.5, -0.5]]);
        let (_, dx) = net.backward(&cache, &g).unwrap();
        let expected = w.transpose() * g.transpose();
        assert!((dx.transpose() - expected).amax() < 1e-15);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let a = init_mlp(&[3, 4, 2], 0).unwrap();
        let b = init_mlp(&[3, 5, 2], 0).unwrap();
        let x = batch_from_rows(&[[0.0, 1.0, 2.0]]);
        let (_, cache) = a.forward(&x, Mode::Eval).unwrap();
        assert_eq!(b.backward(&cache, &Batch::zeros(1, 2)).unwrap_err(), NnError::StaleCache);
    }

    fn scalar_net(w: f64) -> Mlp {
        Mlp {
            layers: vec![Layer::Dense(Dense {
                weight: DMatrix::from_element(1, 1, w),
                bias: DMatrix::zeros(1, 1),
            })],
        }
    }

    fn weight(net: &Mlp) -> f64 {
        net.dense_layers().next().unwrap().weight[0]
    }

    #[test]
    fn adam_fixed_point_and_descent() {
        let mut net = scalar_net(1.0);
        let mut opt = Adam::new(&net, 1e-3);
        opt.apply(&mut net, &[DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)]).unwrap();
        assert_eq!(weight(&net), 1.0);
        assert_eq!(opt.step, 1);
        // f(w) = w²/2, f'(w) = w
        let g = DMatrix::from_element(1, 1, weight(&net));
        opt.apply(&mut net, &[g, DMatrix::zeros(1, 1)]).unwrap();
        assert!(weight(&net).abs() < 1.0);
    }

    #[test]
    fn adam_minimizes_shifted_quadratic() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 0.1);
        for _ in 0..200 {
            let g = DMatrix::from_element(1, 1, 2.0 * (weight(&net) - 3.0));
            opt.apply(&mut net, &[g, DMatrix::zeros(1, 1)]).unwrap();
        }
        assert!((weight(&net) - 3.0).abs() < 0.1, "{}", weight(&net));
    }

    #[test]
    fn adam_names_non_finite_block() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 0.1);
        let err = opt
            .apply(&mut net, &[DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, f64::NAN)])
            .unwrap_err();
        assert_eq!(err, NnError::NonFiniteGradient("layer 0 bias".into()));
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn soft_update_extremes_and_blend() {
        let source = init_mlp(&[2, 3, 1], 1).unwrap();
        let original = init_mlp(&[2, 3, 1], 2).unwrap();
        let mut t = original.clone();
        soft_update(&mut t, &source, 1.0).unwrap();
        assert_eq!(t, source);
        let mut t = original.clone();
        soft_update(&mut t, &source, 0.0).unwrap();
        assert_eq!(t, original);

        let mut zero = original.clone();
        let mut one = original;
        for b in zero.all_blocks_mut() {
            b.fill(0.0);
        }
        for b in one.all_blocks_mut() {
            b.fill(1.0);
        }
        soft_update(&mut zero, &one, 0.001).unwrap();
        assert!(zero.all_blocks().iter().all(|b| b.iter().all(|v| *v == 0.001)));
    }

    #[test]
    fn soft_update_rejects_mismatched_architectures() {
        let mut a = init_mlp(&[2, 3, 1], 1).unwrap();
        let b = init_mlp(&[2, 4, 1], 1).unwrap();
        assert!(matches!(soft_update(&mut a, &b, 0.5), Err(NnError::Architecture(_))));
    }

    #[test]
    fn critic_block_orders_agree() {
        let critic = Critic::build(3, 2, 6, 5, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(critic.all_blocks().len(), critic.block_names().len());
        let mut c2 = critic.clone();
        let shapes: Vec<_> = critic.all_blocks().iter().map(|b| b.shape()).collect();
        let shapes_mut: Vec<_> = c2.all_blocks_mut().iter().map(|b| b.shape()).collect();
        assert_eq!(shapes, shapes_mut);
        assert!(critic.block_names().last().unwrap().contains("running"));
    }
}
