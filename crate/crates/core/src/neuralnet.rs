//! A small fully connected ReLU network with exact backpropagation.
//!
//! Parameters live in one flat vector so optimizers, checkpoints and the
//! finite-difference checker can treat the model as a point in `R^p`.
//! Layer `l` stores its weight matrix (`out x in`, row-major) followed by its
//! bias vector.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

impl OutputActivation {
    fn apply(self, z: f64) -> f64 {
        match self {
            OutputActivation::Identity => z,
            OutputActivation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activated value.
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            OutputActivation::Identity => 1.0,
            OutputActivation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for backpropagation.
pub struct Forward {
    /// `activations[0]` is the input; `activations[l]` is the ReLU output of
    /// hidden layer `l`.
    activations: Vec<Array2<f64>>,
    outputs: Array1<f64>,
}

impl Forward {
    pub fn outputs(&self) -> &Array1<f64> {
        &self.outputs
    }
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn new(layer_sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "layer sizes {layer_sizes:?} need an input and an output layer of nonzero width"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Config("the network must have a single output".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            output,
            params,
        })
    }

    /// Same shape, every parameter zero.
    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        let mut m = Mlp::new(layer_sizes, output, 0)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        let mut off = 0;
        self.layer_sizes.windows(2).map(move |pair| {
            let start = off;
            off += pair[0] * pair[1] + pair[1];
            (start, pair[0], pair[1])
        })
    }

    fn layer(&self, off: usize, fan_in: usize, fan_out: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w_len = fan_in * fan_out;
        let w = ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + w_len]).unwrap();
        let b = ArrayView1::from(&self.params[off + w_len..off + w_len + fan_out]);
        (w, b)
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                actual: x.len(),
            });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(view)[0])
    }

    /// One output per input row.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.forward_cached(x).outputs
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Forward {
        assert_eq!(x.ncols(), self.input_size(), "input width");
        let n_layers = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(n_layers);
        activations.push(x.to_owned());
        let mut outputs = Array1::zeros(x.nrows());
        for (l, (off, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let (w, b) = self.layer(off, fan_in, fan_out);
            let mut z = activations[l].dot(&w.t());
            z += &b;
            if l + 1 == n_layers {
                let act = self.output;
                outputs = z.column(0).mapv(|v| act.apply(v));
            } else {
                z.mapv_inplace(|v| v.max(0.0));
                activations.push(z);
            }
        }
        Forward {
            activations,
            outputs,
        }
    }

    /// Accumulate into `grads` the gradient of `sum_i d_out[i] * y_i` with
    /// respect to every parameter, where `y` are the cached outputs.
    pub fn backward(&self, fwd: &Forward, d_out: &[f64], grads: &mut [f64]) {
        assert_eq!(d_out.len(), fwd.outputs.len(), "one output gradient per row");
        assert_eq!(grads.len(), self.params.len());
        let act = self.output;
        let mut delta = Array2::from_shape_fn((d_out.len(), 1), |(i, _)| {
            d_out[i] * act.derivative_at_output(fwd.outputs[i])
        });
        let layers: Vec<_> = self.layer_offsets().collect();
        for (l, &(off, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &fwd.activations[l];
            let w_len = fan_in * fan_out;
            {
                let (gw, gb) = grads[off..off + w_len + fan_out].split_at_mut(w_len);
                let mut gw = ArrayViewMut2::from_shape((fan_out, fan_in), gw).unwrap();
                gw += &delta.t().dot(input);
                for (g, s) in gb.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g += s;
                }
            }
            if l > 0 {
                let (w, _) = self.layer(off, fan_in, fan_out);
                let mut next = delta.dot(&w);
                next.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
    }

    pub fn to_checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            hidden_activation: "relu".into(),
            output_activation: self.output,
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: MlpCheckpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Unsupported(format!("checkpoint version {}", ck.version)));
        }
        if ck.hidden_activation != "relu" {
            return Err(Error::Unsupported(format!("hidden activation {}", ck.hidden_activation)));
        }
        if ck.params.len() != param_count(&ck.layer_sizes) || ck.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("checkpoint parameters do not match the layer sizes".into()));
        }
        Ok(Mlp {
            layer_sizes: ck.layer_sizes,
            output: ck.output_activation,
            params: ck.params,
        })
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

/// Versioned, text-serializable model state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: OutputActivation,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Msle,
    Qerror,
}

impl LossKind {
    /// Qerror is trained through its log-space surrogate.
    pub fn training_surrogate(self) -> LossKind {
        match self {
            LossKind::Qerror => LossKind::Msle,
            k => k,
        }
    }
}

/// Per-sample loss. Predictions and labels are floored at `clip_floor` for
/// the log-based losses.
pub fn loss(kind: LossKind, prediction: f64, label: f64, clip_floor: f64) -> f64 {
    match kind {
        LossKind::Mse => (prediction - label).powi(2),
        LossKind::Msle => {
            let d = prediction.max(clip_floor).ln() - label.max(clip_floor).ln();
            d * d
        }
        LossKind::Qerror => {
            let p = prediction.max(clip_floor);
            let w = label.max(clip_floor);
            (p / w).max(w / p)
        }
    }
}

/// `d loss / d prediction`. Zero where the prediction is clipped.
pub fn loss_grad(kind: LossKind, prediction: f64, label: f64, clip_floor: f64) -> f64 {
    match kind {
        LossKind::Mse => 2.0 * (prediction - label),
        LossKind::Msle => {
            if prediction <= clip_floor {
                return 0.0;
            }
            2.0 * (prediction.ln() - label.max(clip_floor).ln()) / prediction
        }
        LossKind::Qerror => {
            if prediction <= clip_floor {
                return 0.0;
            }
            let w = label.max(clip_floor);
            if prediction > w {
                1.0 / w
            } else if prediction < w {
                -w / (prediction * prediction)
            } else {
                0.0
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    /// Floor for predictions and labels in log losses; `None` means `1 / n_rows`.
    #[serde(default)]
    pub clip_floor: Option<f64>,
    pub seed: u64,
    /// Widths of the hidden ReLU layers.
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    /// Expand training queries into vertices once instead of every epoch.
    #[serde(default = "default_true")]
    pub precompute_vertices: bool,
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: Optimizer::adam(),
            loss: LossKind::Msle,
            clip_floor: None,
            seed: 0,
            hidden_layers: default_hidden(),
            precompute_vertices: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        // A zero rate is accepted; it freezes the parameters.
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        if let Some(f) = self.clip_floor {
            if !(f > 0.0) {
                return Err(Error::Config(format!("clip_floor {f} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn clip_floor_for(&self, n_rows: usize) -> f64 {
        self.clip_floor.unwrap_or(1.0 / n_rows.max(1) as f64)
    }

    /// `[input, hidden..., 1]`.
    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_layers.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden_layers);
        sizes.push(1);
        sizes
    }

    /// Seed for weight initialization, distinct from the shuffling stream.
    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(0x5851_f42d_4c95_7f2d)
    }
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, n: usize) -> Self {
        let (m, v) = match kind {
            Optimizer::Sgd => (Vec::new(), Vec::new()),
            Optimizer::Adam { .. } => (vec![0.0; n], vec![0.0; n]),
        };
        OptimizerState { kind, m, v, t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / c1;
                    let v_hat = self.v[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Minibatch training loop shared by every learned estimator.
///
/// Each epoch shuffles `0..n_items` with a generator seeded from `cfg.seed`
/// and calls `objective(model, batch, grads)` per minibatch. The objective
/// returns the batch loss and adds the gradient of that loss into `grads`
/// (which is zeroed beforehand). Returns the per-epoch mean loss.
pub fn fit<F>(model: &mut Mlp, n_items: usize, cfg: &TrainConfig, mut objective: F) -> Result<Vec<f64>>
where
    F: FnMut(&Mlp, &[usize], &mut [f64]) -> f64,
{
    cfg.validate()?;
    if n_items == 0 {
        return Err(Error::EmptyWorkload);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptimizerState::new(cfg.optimizer, model.n_params());
    let mut grads = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let batch_loss = objective(model, batch, &mut grads);
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            total += batch_loss * batch.len() as f64;
            opt.step(&mut model.params, &grads, cfg.learning_rate);
        }
        trace.push(total / n_items as f64);
    }
    Ok(trace)
}

/// Mean loss over `batch` and its exact gradient.
pub fn batch_loss_and_grad(
    model: &Mlp,
    batch: &[(Vec<f64>, f64)],
    kind: LossKind,
    clip_floor: f64,
) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; model.n_params()];
    let idx: Vec<usize> = (0..batch.len()).collect();
    let l = supervised_objective(model, batch, &idx, kind, clip_floor, &mut grads);
    (l, grads)
}

fn supervised_objective(
    model: &Mlp,
    data: &[(Vec<f64>, f64)],
    batch: &[usize],
    kind: LossKind,
    clip_floor: f64,
    grads: &mut [f64],
) -> f64 {
    let width = model.input_size();
    let mut x = Vec::with_capacity(batch.len() * width);
    for &i in batch {
        x.extend_from_slice(&data[i].0);
    }
    let x = Array2::from_shape_vec((batch.len(), width), x).unwrap();
    let fwd = model.forward_cached(x.view());
    let n = batch.len() as f64;
    let mut total = 0.0;
    let d_out: Vec<f64> = batch
        .iter()
        .zip(fwd.outputs())
        .map(|(&i, &p)| {
            let w = data[i].1;
            total += loss(kind, p, w, clip_floor);
            loss_grad(kind, p, w, clip_floor) / n
        })
        .collect();
    model.backward(&fwd, &d_out, grads);
    total / n
}

/// Fit `model` to `(input, label)` pairs. Qerror trains through its MSLE surrogate.
pub fn train(model: &Mlp, data: &[(Vec<f64>, f64)], cfg: &TrainConfig, clip_floor: f64) -> Result<(Mlp, Vec<f64>)> {
    if let Some((bad, _)) = data.iter().find(|(x, _)| x.len() != model.input_size()) {
        return Err(Error::DimensionMismatch {
            expected: model.input_size(),
            actual: bad.len(),
        });
    }
    let mut m = model.clone();
    let kind = cfg.loss.training_surrogate();
    let trace = fit(&mut m, data.len(), cfg, |model, batch, grads| {
        supervised_objective(model, data, batch, kind, clip_floor, grads)
    })?;
    Ok((m, trace))
}

/// Central finite differences of `f` at `params`.
pub fn finite_difference_gradient(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// True when some hidden pre-activation sits within `kink_margin` of zero,
    /// where ReLU has no derivative and the comparison is not meaningful.
    pub near_kink: bool,
}

/// Compare analytic and central-difference gradients of the mean batch loss.
pub fn check_gradients(
    model: &Mlp,
    batch: &[(Vec<f64>, f64)],
    kind: LossKind,
    clip_floor: f64,
    h: f64,
    kink_margin: f64,
) -> GradCheck {
    let (_, analytic) = batch_loss_and_grad(model, batch, kind, clip_floor);
    let mut probe = model.clone();
    let numeric = finite_difference_gradient(model.params(), h, |p| {
        probe.params.copy_from_slice(p);
        batch
            .iter()
            .map(|(x, w)| loss(kind, probe.forward(x).unwrap(), *w, clip_floor))
            .sum::<f64>()
            / batch.len() as f64
    });
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max);
    let x = Array2::from_shape_vec(
        (batch.len(), model.input_size()),
        batch.iter().flat_map(|(x, _)| x.iter().copied()).collect(),
    )
    .unwrap();
    let near_kink = pre_activation_margin(model, x.view()) < kink_margin;
    GradCheck {
        max_rel_error,
        near_kink,
    }
}

/// Smallest |z| over all hidden pre-activations for the given inputs.
pub fn pre_activation_margin(model: &Mlp, x: ArrayView2<'_, f64>) -> f64 {
    let n_layers = model.layer_sizes.len() - 1;
    let mut h = x.to_owned();
    let mut margin = f64::INFINITY;
    for (l, (off, fan_in, fan_out)) in model.layer_offsets().enumerate() {
        if l + 1 == n_layers {
            break;
        }
        let (w, b) = model.layer(off, fan_in, fan_out);
        let mut z = h.dot(&w.t());
        z += &b;
        margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        z.mapv_inplace(|v| v.max(0.0));
        h = z;
    }
    margin
}
