//! Dense feedforward classifier engine.
//!
//! Minimal by design: fully connected layers, relu/tanh hidden activations,
//! a linear logit head, analytic gradients with respect to both parameters
//! and inputs, and plain SGD with momentum. Everything is `f64` because the
//! stretch-factor bound arithmetic downstream divides by small gradient
//! norms, and 32-bit drift destabilizes that search.
//!
//! Layout conventions:
//! - layer `l` maps `n_in -> n_out`; its weight matrix is row-major with
//!   shape `(n_in, n_out)`, entry `w[i * n_out + j]`
//! - logits are the raw output of the last layer, no softmax applied
//! - argmax ties always resolve to the lowest class index

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative at pre-activation `z`. The relu kink at zero takes the
    /// subgradient 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Architecture description: `layer_sizes` runs input dim, hidden dims,
/// class count. The seed fixes the initial weights bit-for-bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        ModelSpec {
            layer_sizes,
            activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config(format!(
                "layer_sizes needs at least input and output dims, got {:?}",
                self.layer_sizes
            )));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer_sizes must be positive, got {:?}",
                self.layer_sizes
            )));
        }
        if self.num_classes() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }
}

/// Provenance tag carried by every model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Protected,
    PiratedSurrogate,
    IndependentSurrogate,
    PiratedTest,
    IndependentTest,
    Suspect,
}

/// A dense feedforward classifier. Immutable once trained; all inference
/// entry points take `&self` and are safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub spec: ModelSpec,
    /// Per-layer row-major weight matrices, shape `(n_in, n_out)`.
    pub weights: Vec<Vec<f64>>,
    /// Per-layer bias vectors, length `n_out`.
    pub biases: Vec<Vec<f64>>,
    pub tag: ModelTag,
    pub lineage: String,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let layers = self.spec.num_layers();
        if self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Shape {
                expected: format!("{layers} weight/bias layers"),
                got: format!("{}/{}", self.weights.len(), self.biases.len()),
            });
        }
        for l in 0..layers {
            let (n_in, n_out) = self.layer_dims(l);
            if self.weights[l].len() != n_in * n_out || self.biases[l].len() != n_out {
                return Err(Error::Shape {
                    expected: format!("layer {l}: weights {n_in}x{n_out}, biases {n_out}"),
                    got: format!(
                        "weights len {}, biases len {}",
                        self.weights[l].len(),
                        self.biases[l].len()
                    ),
                });
            }
        }
        let finite = self
            .weights
            .iter()
            .chain(self.biases.iter())
            .all(|t| t.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric("model parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, layer: usize) -> (usize, usize) {
        (
            self.spec.layer_sizes[layer],
            self.spec.layer_sizes[layer + 1],
        )
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    /// Total number of weight entries (biases excluded).
    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: format!("input dim {}", self.input_dim()),
                got: format!("{}", x.len()),
            });
        }
        Ok(())
    }
}

/// Scaled-uniform (Xavier-style) initialization: each layer's weights are
/// uniform in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`,
/// biases zero. Deterministic in `spec.seed`.
pub fn init_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = Rng::from_seed(spec.seed);
    let mut weights = Vec::with_capacity(spec.num_layers());
    let mut biases = Vec::with_capacity(spec.num_layers());
    for l in 0..spec.num_layers() {
        let n_in = spec.layer_sizes[l];
        let n_out = spec.layer_sizes[l + 1];
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let w: Vec<f64> = (0..n_in * n_out)
            .map(|_| rng.uniform_in(-limit, limit))
            .collect();
        weights.push(w);
        biases.push(vec![0.0; n_out]);
    }
    Ok(Model {
        spec: spec.clone(),
        weights,
        biases,
        tag: ModelTag::Protected,
        lineage: String::new(),
    })
}

/// Forward activations cached for gradient computation: `acts[0]` is the
/// input, `acts[l+1]` the output of layer `l`; `pre[l]` holds layer `l`'s
/// pre-activations.
struct ForwardCache {
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn forward_cached(model: &Model, x: &[f64]) -> ForwardCache {
    let layers = model.spec.num_layers();
    let mut acts = Vec::with_capacity(layers + 1);
    let mut pre = Vec::with_capacity(layers);
    acts.push(x.to_vec());
    for l in 0..layers {
        let (n_in, n_out) = model.layer_dims(l);
        let w = &model.weights[l];
        let b = &model.biases[l];
        let input = &acts[l];
        let mut z = b.clone();
        for i in 0..n_in {
            let xi = input[i];
            if xi == 0.0 {
                continue;
            }
            let row = &w[i * n_out..(i + 1) * n_out];
            for (j, wij) in row.iter().enumerate() {
                z[j] += xi * wij;
            }
        }
        let out = if l + 1 == layers {
            z.clone()
        } else {
            z.iter().map(|&v| model.spec.activation.apply(v)).collect()
        };
        pre.push(z);
        acts.push(out);
    }
    ForwardCache { acts, pre }
}

/// Pre-softmax logits for one input. No normalization is applied.
pub fn forward_logits(model: &Model, x: &[f64]) -> Result<Vec<f64>> {
    model.check_input(x)?;
    let cache = forward_cached(model, x);
    Ok(cache.acts.last().cloned().unwrap_or_default())
}

/// argmax with ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hard prediction: argmax over logits, lowest index on ties.
pub fn predict(model: &Model, x: &[f64]) -> Result<usize> {
    Ok(argmax(&forward_logits(model, x)?))
}

/// Largest-logit class excluding `y`; ties resolve to the lowest index.
fn runner_up_class(logits: &[f64], y: usize) -> usize {
    let mut best = if y == 0 { 1 } else { 0 };
    for (k, v) in logits.iter().enumerate() {
        if k == y || k == best {
            continue;
        }
        if *v > logits[best] {
            best = k;
        }
    }
    best
}

/// Logit margin of class `y`: `s_y(x) - max_{k != y} s_k(x)`. Positive iff
/// the model predicts `y` with a strict margin; zero on an exact tie.
pub fn logit_margin(model: &Model, x: &[f64], y: usize) -> Result<f64> {
    let logits = forward_logits(model, x)?;
    if y >= logits.len() {
        return Err(Error::Index(format!(
            "class {y} out of range for {} classes",
            logits.len()
        )));
    }
    let k = runner_up_class(&logits, y);
    Ok(logits[y] - logits[k])
}

/// Result of [`margin_gradient`]: the input-space gradient of the logit
/// margin, its Euclidean norm, the runner-up class the margin was taken
/// against, and the margin value itself.
#[derive(Debug, Clone)]
pub struct MarginGradient {
    pub gradient: Vec<f64>,
    pub norm: f64,
    pub runner_up: usize,
    pub margin: f64,
}

/// Analytic gradient of the logit margin with respect to the input, with
/// the runner-up class fixed to `argmax_{k != y} s_k(x)` (lowest index on
/// ties).
pub fn margin_gradient(model: &Model, x: &[f64], y: usize) -> Result<MarginGradient> {
    model.check_input(x)?;
    if y >= model.num_classes() {
        return Err(Error::Index(format!(
            "class {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    let cache = forward_cached(model, x);
    let logits = cache.acts.last().expect("nonempty acts");
    let k = runner_up_class(logits, y);
    let margin = logits[y] - logits[k];
    let mut upstream = vec![0.0; logits.len()];
    upstream[y] = 1.0;
    upstream[k] = -1.0;
    let gradient = backprop_to_input(model, &cache, &upstream);
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(MarginGradient {
        gradient,
        norm,
        runner_up: k,
        margin,
    })
}

/// Propagate `d_logits = dJ/dz_L` back to the input, returning `dJ/dx`.
fn backprop_to_input(model: &Model, cache: &ForwardCache, d_logits: &[f64]) -> Vec<f64> {
    let layers = model.spec.num_layers();
    let mut d = d_logits.to_vec();
    for l in (0..layers).rev() {
        let (n_in, n_out) = model.layer_dims(l);
        let w = &model.weights[l];
        let mut d_prev = vec![0.0; n_in];
        for (i, dp) in d_prev.iter_mut().enumerate() {
            let row = &w[i * n_out..(i + 1) * n_out];
            *dp = row.iter().zip(&d).map(|(wij, dj)| wij * dj).sum();
        }
        if l > 0 {
            let pre = &cache.pre[l - 1];
            for (dp, z) in d_prev.iter_mut().zip(pre) {
                *dp *= model.spec.activation.derivative(*z);
            }
        }
        d = d_prev;
    }
    d
}

/// Per-layer parameter gradients, same shapes as the model parameters.
struct ParamGrads {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl ParamGrads {
    fn zeros_like(model: &Model) -> Self {
        ParamGrads {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }
}

/// Accumulate `dJ/dparams` for one sample into `grads`, given the upstream
/// logit gradient `d_logits`.
fn accumulate_param_grads(
    model: &Model,
    cache: &ForwardCache,
    d_logits: &[f64],
    grads: &mut ParamGrads,
) {
    let layers = model.spec.num_layers();
    let mut d = d_logits.to_vec();
    for l in (0..layers).rev() {
        let (n_in, n_out) = model.layer_dims(l);
        let input = &cache.acts[l];
        let gw = &mut grads.weights[l];
        for i in 0..n_in {
            let xi = input[i];
            if xi != 0.0 {
                let row = &mut gw[i * n_out..(i + 1) * n_out];
                for (j, g) in row.iter_mut().enumerate() {
                    *g += xi * d[j];
                }
            }
        }
        for (g, dj) in grads.biases[l].iter_mut().zip(&d) {
            *g += dj;
        }
        if l > 0 {
            let w = &model.weights[l];
            let pre = &cache.pre[l - 1];
            let mut d_prev = vec![0.0; n_in];
            for (i, dp) in d_prev.iter_mut().enumerate() {
                let row = &w[i * n_out..(i + 1) * n_out];
                let s: f64 = row.iter().zip(&d).map(|(wij, dj)| wij * dj).sum();
                *dp = s * model.spec.activation.derivative(pre[i]);
            }
            d = d_prev;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Training loss.
///
/// `CrossEntropy` trains against hard labels. `SoftKl` trains against
/// teacher logits stored in the dataset's soft-label channel: the loss is
/// `T^2 * KL(softmax(teacher/T) || softmax(student/T))`, the usual
/// distillation objective (plain KL at `T = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Loss {
    CrossEntropy,
    SoftKl { temperature: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffle-order seed. Callers that derive their own seeds (attacks,
    /// the pipeline stages) override it, so configs may omit it.
    #[serde(default)]
    pub seed: u64,
    pub loss: Loss,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Loss::SoftKl { temperature } = self.loss {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::Config(format!(
                    "soft_kl temperature must be positive, got {temperature}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Loss value and upstream logit gradient for one sample.
fn loss_and_logit_grad(
    loss: Loss,
    logits: &[f64],
    label: usize,
    soft_target: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    match loss {
        Loss::CrossEntropy => {
            let p = softmax(logits);
            // No clamp: a collapsed probability means divergence, and the
            // resulting non-finite loss is what the caller checks for.
            let value = -p[label].ln();
            let mut d = p;
            d[label] -= 1.0;
            Ok((value, d))
        }
        Loss::SoftKl { temperature } => {
            let t = soft_target.ok_or_else(|| {
                Error::Config("soft_kl loss requires a dataset with soft labels".into())
            })?;
            let p = softmax(&t.iter().map(|v| v / temperature).collect::<Vec<_>>());
            let q = softmax(&logits.iter().map(|v| v / temperature).collect::<Vec<_>>());
            let mut value = 0.0;
            for (pi, qi) in p.iter().zip(&q) {
                if *pi > 0.0 {
                    value += pi * (pi / qi).ln();
                }
            }
            value *= temperature * temperature;
            let d: Vec<f64> = q
                .iter()
                .zip(&p)
                .map(|(qi, pi)| temperature * (qi - pi))
                .collect();
            Ok((value, d))
        }
    }
}

/// SGD with momentum over shuffled mini-batches. Deterministic in
/// `cfg.seed`: the shuffle order comes from the crate PRNG and nothing
/// else is stochastic. `epochs = 0` returns the input model unchanged.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    model.validate()?;
    data.validate()?;
    if data.dim() != model.input_dim() {
        return Err(Error::Shape {
            expected: format!("input dim {}", model.input_dim()),
            got: format!("{}", data.dim()),
        });
    }
    if data.num_classes > model.num_classes() {
        return Err(Error::Config(format!(
            "data has {} classes but model outputs {}",
            data.num_classes,
            model.num_classes()
        )));
    }
    if matches!(cfg.loss, Loss::SoftKl { .. }) {
        match &data.soft_labels {
            None => {
                return Err(Error::Config(
                    "soft_kl loss requires a dataset with soft labels".into(),
                ))
            }
            Some(soft) => {
                if soft.first().map(Vec::len) != Some(model.num_classes()) {
                    return Err(Error::Shape {
                        expected: format!("soft labels with {} columns", model.num_classes()),
                        got: format!("{:?}", soft.first().map(Vec::len)),
                    });
                }
            }
        }
    }

    let mut trained = model.clone();
    let mut velocity = ParamGrads::zeros_like(model);
    let mut rng = Rng::from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = ParamGrads::zeros_like(&trained);
            let mut batch_loss = 0.0;
            for &i in batch {
                let cache = forward_cached(&trained, &data.inputs[i]);
                let logits = cache.acts.last().expect("nonempty acts");
                let soft = data.soft_labels.as_ref().map(|s| s[i].as_slice());
                let (value, d_logits) =
                    loss_and_logit_grad(cfg.loss, logits, data.labels[i], soft)?;
                batch_loss += value;
                accumulate_param_grads(&trained, &cache, &d_logits, &mut grads);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Train {
                    epoch,
                    batch: batch_idx,
                    msg: format!("non-finite loss {batch_loss}"),
                });
            }
            grads.scale(1.0 / batch.len() as f64);
            for l in 0..trained.weights.len() {
                for (idx, w) in trained.weights[l].iter_mut().enumerate() {
                    let g = grads.weights[l][idx] + cfg.weight_decay * *w;
                    let v = cfg.momentum * velocity.weights[l][idx] - cfg.learning_rate * g;
                    velocity.weights[l][idx] = v;
                    *w += v;
                }
                for (idx, b) in trained.biases[l].iter_mut().enumerate() {
                    let g = grads.biases[l][idx];
                    let v = cfg.momentum * velocity.biases[l][idx] - cfg.learning_rate * g;
                    velocity.biases[l][idx] = v;
                    *b += v;
                }
            }
        }
    }
    Ok(trained)
}

/// Gradient of the cross-entropy loss with respect to the input; used by
/// the signed-gradient perturbation in adversarial fine-tuning.
pub fn loss_input_gradient(model: &Model, x: &[f64], y: usize) -> Result<Vec<f64>> {
    model.check_input(x)?;
    if y >= model.num_classes() {
        return Err(Error::Index(format!(
            "class {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    let cache = forward_cached(model, x);
    let logits = cache.acts.last().expect("nonempty acts");
    let (_, d_logits) = loss_and_logit_grad(Loss::CrossEntropy, logits, y, None)?;
    Ok(backprop_to_input(model, &cache, &d_logits))
}

/// Fraction of samples the model classifies correctly.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    if data.inputs.is_empty() {
        return Err(Error::Empty("accuracy over empty dataset".into()));
    }
    let mut hits = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if predict(model, x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
