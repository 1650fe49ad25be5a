//! Feed-forward softmax classifier with dropout, trained by mini-batch SGD
//! with Nesterov momentum.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{argmax, ClassDistribution};
use crate::rng::{derive_seed, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub activation: Activation,
}

fn default_dropout() -> f64 {
    0.2
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::config(
                "network needs at least one hidden layer, each with positive width",
            ));
        }
        if self.class_count < 2 {
            return Err(Error::config("class_count must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &width in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.class_count))
        {
            dims.push((fan_in, width));
            fan_in = width;
        }
        dims
    }
}

/// Dense layer; `weights` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi)),
        );
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream_rng(seed, 0);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(inputs, outputs)| {
                let bound = 1.0 / (inputs as f64).sqrt();
                let mut layer = Layer::zeros(inputs, outputs);
                for w in &mut layer.weights {
                    *w = rng.gen_range(-bound..=bound);
                }
                layer
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            layers: spec
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        })
    }

    /// Checks shapes against the spec and that every entry is finite.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let dims = self.spec.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::Shape {
                expected: dims.len(),
                actual: self.layers.len(),
            });
        }
        for ((inputs, outputs), layer) in dims.into_iter().zip(&self.layers) {
            if layer.inputs != inputs || layer.outputs != outputs {
                return Err(Error::Shape {
                    expected: inputs * outputs,
                    actual: layer.inputs * layer.outputs,
                });
            }
            if layer.weights.len() != inputs * outputs {
                return Err(Error::Shape {
                    expected: inputs * outputs,
                    actual: layer.weights.len(),
                });
            }
            if layer.bias.len() != outputs {
                return Err(Error::Shape {
                    expected: outputs,
                    actual: layer.bias.len(),
                });
            }
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(Layer::values_mut)
    }
}

/// Same shape as [`NetworkParams`]; holds partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Layer::values)
    }

    fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.values_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::domain("logit vector must be non-empty"));
        }
        if scores.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        Ok(Self(scores))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Off,
    /// Sample a fresh mask from the given seed.
    Sample(u64),
}

struct Trace {
    /// Input to each layer; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
    /// Per hidden layer: derivative of the layer output w.r.t. its pre-activation.
    gates: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn check_dim(params: &NetworkParams, features: &[f64]) -> Result<()> {
    if features.len() != params.spec.input_dim {
        return Err(Error::Shape {
            expected: params.spec.input_dim,
            actual: features.len(),
        });
    }
    Ok(())
}

fn forward_trace(
    params: &NetworkParams,
    features: &[f64],
    mut rng: Option<&mut StreamRng>,
) -> Trace {
    let rate = params.spec.dropout_rate;
    let keep_scale = 1.0 / (1.0 - rate);
    let hidden = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut gates = Vec::with_capacity(hidden);
    inputs.push(features.to_vec());
    let mut out = Vec::new();
    for layer in &params.layers[..hidden] {
        layer.affine(inputs.last().expect("input pushed"), &mut out);
        let mut gate = Vec::with_capacity(out.len());
        for z in out.iter_mut() {
            let mut g = if *z > 0.0 { 1.0 } else { 0.0 };
            if let Some(rng) = rng.as_deref_mut() {
                if rate > 0.0 {
                    g *= if rng.gen::<f64>() < rate {
                        0.0
                    } else {
                        keep_scale
                    };
                }
            }
            *z = if *z > 0.0 { *z * g } else { 0.0 };
            gate.push(g);
        }
        inputs.push(std::mem::take(&mut out));
        gates.push(gate);
    }
    let mut logits = Vec::new();
    params.layers[hidden].affine(inputs.last().expect("input pushed"), &mut logits);
    Trace {
        inputs,
        gates,
        logits,
    }
}

/// Logits for one feature vector.
pub fn forward(
    params: &NetworkParams,
    features: &[f64],
    dropout: DropoutMode,
) -> Result<LogitVector> {
    check_dim(params, features)?;
    let trace = match dropout {
        DropoutMode::Off => forward_trace(params, features, None),
        DropoutMode::Sample(seed) => {
            let mut rng = stream_rng(seed, 0);
            forward_trace(params, features, Some(&mut rng))
        }
    };
    LogitVector::new(trace.logits)
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|v| v - lse).collect()
}

fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(logits: &LogitVector) -> Result<ClassDistribution> {
    if logits.0.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    Ok(ClassDistribution::new_unchecked(softmax_slice(&logits.0)))
}

/// `-Σ y_k ln p_k`. Returns `+inf` when `pred` puts zero mass on a class the
/// target supports.
pub fn loss_ce(target: &ClassDistribution, pred: &ClassDistribution) -> f64 {
    target
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .filter(|(&y, _)| y > 0.0)
        .map(|(&y, &p)| if p > 0.0 { -y * p.ln() } else { f64::INFINITY })
        .sum()
}

/// `KL(target ‖ pred) = Σ y_k ln(y_k / p_k)`, with `0 · ln 0 = 0`.
pub fn loss_kl(target: &ClassDistribution, pred: &ClassDistribution) -> f64 {
    let kl: f64 = target
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .filter(|(&y, _)| y > 0.0)
        .map(|(&y, &p)| {
            if p > 0.0 {
                y * (y.ln() - p.ln())
            } else {
                f64::INFINITY
            }
        })
        .sum();
    kl.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeOnehot,
    CeDistr,
    KlDistr,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::CeOnehot => "ce_onehot",
            LossKind::CeDistr => "ce_distr",
            LossKind::KlDistr => "kl_distr",
        }
    }

    fn loss_from_logits(self, target: &ClassDistribution, logits: &[f64]) -> f64 {
        let log_p = log_softmax(logits);
        target
            .as_slice()
            .iter()
            .zip(&log_p)
            .filter(|(&y, _)| y > 0.0)
            .map(|(&y, &lp)| match self {
                LossKind::CeOnehot | LossKind::CeDistr => -y * lp,
                LossKind::KlDistr => y * (y.ln() - lp),
            })
            .sum()
    }
}

/// Feature vectors paired with target distributions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<ClassDistribution>,
}

impl LabeledSet {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<ClassDistribution>) -> Result<Self> {
        if features.len() != targets.len() {
            return Err(Error::Shape {
                expected: features.len(),
                actual: targets.len(),
            });
        }
        Ok(Self { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn check(&self, params: &NetworkParams) -> Result<()> {
        if self.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        for (x, y) in self.features.iter().zip(&self.targets) {
            check_dim(params, x)?;
            if y.class_count() != params.spec.class_count {
                return Err(Error::Shape {
                    expected: params.spec.class_count,
                    actual: y.class_count(),
                });
            }
        }
        Ok(())
    }
}

/// Mean per-sample loss with dropout off.
pub fn batch_loss(params: &NetworkParams, batch: &LabeledSet, kind: LossKind) -> Result<f64> {
    batch.check(params)?;
    let total: f64 = batch
        .features
        .iter()
        .zip(&batch.targets)
        .map(|(x, y)| kind.loss_from_logits(y, &forward_trace(params, x, None).logits))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`batch_loss`] with dropout off.
pub fn gradient(params: &NetworkParams, batch: &LabeledSet, kind: LossKind) -> Result<Gradient> {
    batch.check(params)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    Ok(accumulate_gradient(params, batch, &indices, kind, None).0)
}

/// Gradient and summed loss over `indices`, optionally with sampled dropout
/// masks. Samples are reduced in index order.
fn accumulate_gradient(
    params: &NetworkParams,
    batch: &LabeledSet,
    indices: &[usize],
    kind: LossKind,
    mut rng: Option<&mut StreamRng>,
) -> (Gradient, f64) {
    let mut grad = Gradient::zeros_like(params);
    let mut loss_sum = 0.0;
    let last = params.layers.len() - 1;
    for &i in indices {
        let target = &batch.targets[i];
        let trace = forward_trace(params, &batch.features[i], rng.as_deref_mut());
        loss_sum += kind.loss_from_logits(target, &trace.logits);
        // softmax + CE/KL: dL/dz = p - y
        let mut delta: Vec<f64> = softmax_slice(&trace.logits)
            .into_iter()
            .zip(target.as_slice())
            .map(|(p, y)| p - y)
            .collect();
        for l in (0..=last).rev() {
            let layer = &params.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grad.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let gate = &trace.gates[l - 1];
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            for (p, &gt) in prev.iter_mut().zip(gate) {
                *p *= gt;
            }
            delta = prev;
        }
    }
    grad.scale(1.0 / indices.len() as f64);
    (grad, loss_sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::initial_lr")]
    pub initial_lr: f64,
    #[serde(default = "defaults::lr_decay_factor")]
    pub lr_decay_factor: f64,
    #[serde(default = "defaults::lr_decay_every_epochs")]
    pub lr_decay_every_epochs: usize,
    #[serde(default = "defaults::max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "defaults::early_stop_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    pub loss_kind: LossKind,
}

mod defaults {
    pub fn batch_size() -> usize {
        64
    }
    pub fn initial_lr() -> f64 {
        2e-3
    }
    pub fn lr_decay_factor() -> f64 {
        0.5
    }
    pub fn lr_decay_every_epochs() -> usize {
        5
    }
    pub fn max_epochs() -> usize {
        200
    }
    pub fn early_stop_patience() -> usize {
        20
    }
    pub fn momentum() -> f64 {
        0.9
    }
}

impl TrainConfig {
    pub const OPTIMIZER: &'static str = "sgd-nesterov";

    pub fn new(loss_kind: LossKind) -> Self {
        Self {
            batch_size: defaults::batch_size(),
            initial_lr: defaults::initial_lr(),
            lr_decay_factor: defaults::lr_decay_factor(),
            lr_decay_every_epochs: defaults::lr_decay_every_epochs(),
            max_epochs: defaults::max_epochs(),
            early_stop_patience: defaults::early_stop_patience(),
            momentum: defaults::momentum(),
            seed: 0,
            loss_kind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::config("lr_decay_factor must lie in (0, 1]"));
        }
        if self.lr_decay_every_epochs == 0 {
            return Err(Error::config("lr_decay_every_epochs must be at least 1"));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::config("early_stop_patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be at least 1"));
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::config("initial_lr must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Step schedule: the rate is multiplied by the decay factor every
    /// `lr_decay_every_epochs` epochs (epochs counted from zero).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every_epochs) as i32;
        self.initial_lr * self.lr_decay_factor.powi(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// One-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub params: NetworkParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub log: Vec<EpochLog>,
}

/// Trains from a seeded initialization and returns the best validation checkpoint.
pub fn train(
    spec: &NetworkSpec,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = NetworkParams::init(spec, config.seed)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::domain(
            "training and validation sets must be non-empty",
        ));
    }
    train_set.check(&params)?;
    val_set.check(&params)?;

    let mut rng = stream_rng(config.seed, 1);
    let mut velocity = Gradient::zeros_like(&params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (params.clone(), 0usize, f64::INFINITY);
    let mut stale = 0;
    let mut log = Vec::new();

    for epoch in 1..=config.max_epochs {
        let lr = config.learning_rate(epoch - 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (grad, batch_sum) =
                accumulate_gradient(&params, train_set, chunk, config.loss_kind, Some(&mut rng));
            if !batch_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite training loss".into(),
                });
            }
            loss_sum += batch_sum;
            nesterov_step(&mut params, &mut velocity, &grad, lr, config.momentum);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = batch_loss(&params, val_set, config.loss_kind)?;
        if !val_loss.is_finite() || params.values().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let improved = val_loss < best.2;
        if improved {
            best = (params.clone(), epoch, val_loss);
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
            improved,
        });
        if stale >= config.early_stop_patience {
            break;
        }
    }

    let (params, best_epoch, best_val_loss) = best;
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_val_loss,
        log,
    })
}

// v <- mu v + g;  w <- w - lr (g + mu v)
fn nesterov_step(
    params: &mut NetworkParams,
    velocity: &mut Gradient,
    grad: &Gradient,
    lr: f64,
    mu: f64,
) {
    for ((p, v), g) in params
        .layers
        .iter_mut()
        .zip(&mut velocity.layers)
        .zip(&grad.layers)
    {
        for ((w, vel), &gw) in p.values_mut().zip(v.values_mut()).zip(g.values()) {
            *vel = mu * *vel + gw;
            *w -= lr * (gw + mu * *vel);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    Plain,
    McDropout { passes: usize, seed: u64 },
}

/// Dropout-sampled logits for each Monte Carlo pass.
pub fn mc_logits(
    params: &NetworkParams,
    features: &[f64],
    passes: usize,
    seed: u64,
) -> Result<Vec<LogitVector>> {
    if passes == 0 {
        return Err(Error::domain("MC dropout needs at least one pass"));
    }
    (0..passes as u64)
        .map(|pass| {
            forward(
                params,
                features,
                DropoutMode::Sample(derive_seed(seed, pass)),
            )
        })
        .collect()
}

/// Elementwise mean of probability vectors.
pub(crate) fn mean_distribution(dists: &[ClassDistribution]) -> ClassDistribution {
    let k = dists[0].class_count();
    let mut acc = vec![0.0; k];
    for d in dists {
        for (a, p) in acc.iter_mut().zip(d.as_slice()) {
            *a += p;
        }
    }
    let n = dists.len() as f64;
    ClassDistribution::new_unchecked(acc.into_iter().map(|a| a / n).collect())
}

pub fn predict(
    params: &NetworkParams,
    features: &[f64],
    mode: PredictMode,
) -> Result<ClassDistribution> {
    match mode {
        PredictMode::Plain => softmax(&forward(params, features, DropoutMode::Off)?),
        PredictMode::McDropout { passes, seed } => {
            let dists = mc_logits(params, features, passes, seed)?
                .iter()
                .map(softmax)
                .collect::<Result<Vec<_>>>()?;
            Ok(mean_distribution(&dists))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::vote_entropy;

    fn spec(input: usize, hidden: &[usize], k: usize, dropout: f64) -> NetworkSpec {
        NetworkSpec {
            input_dim: input,
            hidden_dims: hidden.to_vec(),
            class_count: k,
            dropout_rate: dropout,
            activation: Activation::Relu,
        }
    }

    fn dist(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let p = NetworkParams::zeros(&spec(3, &[4], 2, 0.5)).unwrap();
        let z = forward(&p, &[1.0, -2.0, 3.0], DropoutMode::Sample(3)).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let p = NetworkParams::init(&spec(3, &[8, 4], 3, 0.3), 9).unwrap();
        let x = [0.2, -0.4, 1.1];
        assert_eq!(
            forward(&p, &x, DropoutMode::Off).unwrap(),
            forward(&p, &x, DropoutMode::Off).unwrap()
        );
        assert_eq!(
            forward(&p, &x, DropoutMode::Sample(5)).unwrap(),
            forward(&p, &x, DropoutMode::Sample(5)).unwrap()
        );
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = NetworkParams::init(&spec(3, &[4], 2, 0.0), 1).unwrap();
        assert!(matches!(
            forward(&p, &[1.0], DropoutMode::Off),
            Err(Error::Shape {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn dropout_zeroes_and_rescales_hidden_units() {
        // single hidden layer of identity-like units feeding a summing output
        let s = spec(1, &[200], 2, 0.5);
        let mut p = NetworkParams::zeros(&s).unwrap();
        p.layers[0].weights.iter_mut().for_each(|w| *w = 1.0);
        p.layers[1].weights[..200].iter_mut().for_each(|w| *w = 1.0);
        let z = forward(&p, &[1.0], DropoutMode::Sample(11)).unwrap();
        let survivors = z.as_slice()[0] / 2.0;
        assert_eq!(survivors.fract(), 0.0);
        assert!(survivors > 60.0 && survivors < 140.0, "{survivors}");
        assert_eq!(
            forward(&p, &[1.0], DropoutMode::Off).unwrap().as_slice()[0],
            200.0
        );
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&LogitVector::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
        let p = softmax(&LogitVector::new(vec![2.0, 0.0]).unwrap()).unwrap();
        assert!((p.as_slice()[0] - 0.880_797_077_977_882_4).abs() < 1e-12);
        assert!((p.as_slice()[1] - 0.119_202_922_022_117_6).abs() < 1e-12);
        let z = vec![0.3, -1.2, 4.0];
        let shifted: Vec<f64> = z.iter().map(|v| v + 7.0).collect();
        let a = softmax(&LogitVector::new(z).unwrap()).unwrap();
        let b = softmax(&LogitVector::new(shifted).unwrap()).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(LogitVector::new(vec![f64::NAN]).is_err());
        let big = softmax(&LogitVector::new(vec![1000.0, 0.0]).unwrap()).unwrap();
        assert_eq!(big.as_slice()[0], 1.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let one = ClassDistribution::one_hot(2, 0).unwrap();
        assert!((loss_ce(&one, &dist(&[0.5, 0.5])) - std::f64::consts::LN_2).abs() < 1e-15);
        let y = dist(&[0.3, 0.7]);
        assert!((loss_ce(&y, &y) - 0.610_864_302_054_893_5).abs() < 1e-12);
        assert_eq!(loss_ce(&one, &dist(&[1.0, 0.0])), 0.0);
        assert_eq!(
            loss_ce(&dist(&[0.5, 0.5]), &dist(&[1.0, 0.0])),
            f64::INFINITY
        );
    }

    #[test]
    fn kl_examples() {
        let u = dist(&[0.5, 0.5]);
        assert_eq!(loss_kl(&u, &u), 0.0);
        assert!((loss_kl(&dist(&[1.0, 0.0]), &u) - std::f64::consts::LN_2).abs() < 1e-15);
        // 0.3 ln 0.6 + 0.7 ln 1.4
        assert!((loss_kl(&dist(&[0.3, 0.7]), &u) - 0.082_282_878_505_051_78).abs() < 1e-12);
        assert_eq!(
            loss_kl(&dist(&[0.5, 0.5]), &dist(&[0.0, 1.0])),
            f64::INFINITY
        );
    }

    #[test]
    fn ce_is_entropy_plus_kl() {
        let y = dist(&[0.1, 0.6, 0.3]);
        let p = dist(&[0.2, 0.2, 0.6]);
        assert!((loss_ce(&y, &p) - vote_entropy(&y) - loss_kl(&y, &p)).abs() < 1e-12);
    }

    fn toy_batch() -> (NetworkParams, LabeledSet) {
        let p = NetworkParams::init(&spec(2, &[5], 3, 0.0), 4).unwrap();
        let set = LabeledSet::new(
            vec![vec![0.5, -1.0], vec![1.5, 0.25]],
            vec![
                dist(&[0.2, 0.3, 0.5]),
                ClassDistribution::one_hot(3, 1).unwrap(),
            ],
        )
        .unwrap();
        (p, set)
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let (p, set) = toy_batch();
        for kind in [LossKind::CeOnehot, LossKind::CeDistr, LossKind::KlDistr] {
            let single: Vec<f64> = (0..2)
                .map(|i| {
                    let pred = predict(&p, &set.features[i], PredictMode::Plain).unwrap();
                    match kind {
                        LossKind::KlDistr => loss_kl(&set.targets[i], &pred),
                        _ => loss_ce(&set.targets[i], &pred),
                    }
                })
                .collect();
            let mean = batch_loss(&p, &set, kind).unwrap();
            assert!((mean - (single[0] + single[1]) / 2.0).abs() < 1e-12);

            let same = LabeledSet::new(
                vec![set.features[0].clone(); 3],
                vec![set.targets[0].clone(); 3],
            )
            .unwrap();
            assert!((batch_loss(&p, &same, kind).unwrap() - single[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_vanishes_on_perfect_predictions() {
        let (p, set) = toy_batch();
        let preds: Vec<ClassDistribution> = set
            .features
            .iter()
            .map(|x| predict(&p, x, PredictMode::Plain).unwrap())
            .collect();
        let perfect = LabeledSet::new(set.features.clone(), preds).unwrap();
        assert!(batch_loss(&p, &perfect, LossKind::KlDistr).unwrap().abs() < 1e-12);
        // output error term p - y vanishes, so the whole gradient does
        let g = gradient(&p, &perfect, LossKind::KlDistr).unwrap();
        assert!(g.values().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let (p, set) = toy_batch();
        let doubled = LabeledSet::new(
            set.features.iter().chain(&set.features).cloned().collect(),
            set.targets.iter().chain(&set.targets).cloned().collect(),
        )
        .unwrap();
        let a = gradient(&p, &set, LossKind::CeDistr).unwrap();
        let b = gradient(&p, &doubled, LossKind::CeDistr).unwrap();
        for (x, y) in a.values().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_toy_network() {
        let (p, set) = toy_batch();
        let g = gradient(&p, &set, LossKind::KlDistr).unwrap();
        let h = 1e-5;
        for (i, &analytic) in g.values().enumerate() {
            let mut plus = p.clone();
            *plus.values_mut().nth(i).unwrap() += h;
            let mut minus = p.clone();
            *minus.values_mut().nth(i).unwrap() -= h;
            let numeric = (batch_loss(&plus, &set, LossKind::KlDistr).unwrap()
                - batch_loss(&minus, &set, LossKind::KlDistr).unwrap())
                / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic - numeric).abs() / scale < 1e-4,
                "param {i}: {analytic} vs {numeric}"
            );
        }
    }

    fn separable_set(n: usize) -> LabeledSet {
        let mut features = Vec::new();
        let mut targets = Vec::new();
        for i in 0..n {
            let t = i as f64 / n as f64;
            let class = i % 2;
            let x = if class == 0 { -1.0 - t } else { 1.0 + t };
            features.push(vec![x, (t * 6.0).sin()]);
            targets.push(ClassDistribution::one_hot(2, class).unwrap());
        }
        LabeledSet::new(features, targets).unwrap()
    }

    #[test]
    fn learns_separable_data() {
        let data = separable_set(40);
        let s = spec(2, &[8], 2, 0.0);
        let config = TrainConfig {
            batch_size: 8,
            initial_lr: 0.1,
            lr_decay_every_epochs: 50,
            max_epochs: 60,
            ..TrainConfig::new(LossKind::CeOnehot)
        };
        let out = train(&s, &data, &data, &config).unwrap();
        let correct = data
            .features
            .iter()
            .zip(&data.targets)
            .filter(|(x, y)| {
                predict(&out.params, x, PredictMode::Plain)
                    .unwrap()
                    .argmax()
                    == y.argmax()
            })
            .count();
        assert_eq!(correct, data.len());
    }

    #[test]
    fn zero_learning_rate_stops_after_two_epochs() {
        let data = separable_set(10);
        let config = TrainConfig {
            initial_lr: 0.0,
            early_stop_patience: 1,
            ..TrainConfig::new(LossKind::CeOnehot)
        };
        let out = train(&spec(2, &[4], 2, 0.2), &data, &data, &config).unwrap();
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.best_epoch, 1);
        assert!(out.log[0].improved && !out.log[1].improved);
    }

    #[test]
    fn training_is_reproducible() {
        let data = separable_set(30);
        let config = TrainConfig {
            max_epochs: 5,
            seed: 17,
            ..TrainConfig::new(LossKind::KlDistr)
        };
        let s = spec(2, &[6, 3], 2, 0.2);
        let a = train(&s, &data, &data, &config).unwrap();
        let b = train(&s, &data, &data, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn learning_rate_schedule_halves_every_five_epochs() {
        let c = TrainConfig::new(LossKind::CeOnehot);
        assert_eq!(c.learning_rate(0), 2e-3);
        assert_eq!(c.learning_rate(4), 2e-3);
        assert_eq!(c.learning_rate(5), 1e-3);
        assert_eq!(c.learning_rate(12), 5e-4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = TrainConfig::new(LossKind::CeOnehot);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(LossKind::CeOnehot);
        c.lr_decay_factor = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(LossKind::CeOnehot);
        c.early_stop_patience = 0;
        assert!(c.validate().is_err());
        assert!(spec(2, &[], 2, 0.0).validate().is_err());
        assert!(spec(2, &[3], 2, 1.0).validate().is_err());
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = separable_set(10);
        let config = TrainConfig {
            initial_lr: 1e300,
            ..TrainConfig::new(LossKind::CeOnehot)
        };
        let err = train(&spec(2, &[4], 2, 0.0), &data, &data, &config).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn mc_dropout_without_dropout_equals_plain() {
        let p = NetworkParams::init(&spec(3, &[6], 4, 0.0), 2).unwrap();
        let x = [0.1, 0.2, -0.3];
        let plain = predict(&p, &x, PredictMode::Plain).unwrap();
        let mc = predict(
            &p,
            &x,
            PredictMode::McDropout {
                passes: 20,
                seed: 1,
            },
        )
        .unwrap();
        for (a, b) in plain.as_slice().iter().zip(mc.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mc_dropout_is_seeded_and_on_simplex() {
        let p = NetworkParams::init(&spec(3, &[16], 4, 0.5), 2).unwrap();
        let x = [0.1, 0.2, -0.3];
        let mode = PredictMode::McDropout {
            passes: 20,
            seed: 8,
        };
        let a = predict(&p, &x, mode).unwrap();
        assert_eq!(a, predict(&p, &x, mode).unwrap());
        assert!((a.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(predict(&p, &x, PredictMode::McDropout { passes: 0, seed: 8 }).is_err());
    }

    #[test]
    fn params_validate_shapes() {
        let mut p = NetworkParams::init(&spec(2, &[3], 2, 0.0), 0).unwrap();
        assert!(p.validate().is_ok());
        p.layers[1].bias.pop();
        assert!(p.validate().is_err());
    }
}
