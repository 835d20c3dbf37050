//! Feed-forward binary classifier with hand-written backpropagation.
//!
//! Hidden layers are `Linear → LayerNorm (optional) → ReLU`; the output layer
//! is a single linear unit producing a logit `g(x)`, so that
//! `P(y = 1 | x) = σ(g(x))`. Training minimises mean binary cross-entropy with
//! Adam and restores the parameters with the best validation loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::{seed, Error, Result};

/// Variance floor inside layer normalisation.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Probabilities handed to e-value computations are clamped to
/// `[PROB_CLAMP, 1 − PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Current model serialisation version.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub shift: Vec<f64>,
}

/// A dense layer; `weights` is row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: Option<LayerNorm>,
}

impl Layer {
    fn zeros(input_dim: usize, output_dim: usize, norm: bool) -> Self {
        Layer {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            norm: norm.then(|| LayerNorm {
                gain: vec![1.0; output_dim],
                shift: vec![0.0; output_dim],
            }),
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.input_dim).zip(&self.bias) {
            out.push(b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }
}

/// Shape of a network: input width, hidden widths, layer normalisation flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    #[serde(default = "Architecture::default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "Architecture::default_layer_norm")]
    pub layer_norm: bool,
    /// Centre and scale each input feature with training-set statistics
    /// before the first layer.
    #[serde(default)]
    pub standardize_inputs: bool,
}

impl Architecture {
    fn default_hidden() -> Vec<usize> {
        vec![30, 30]
    }
    fn default_layer_norm() -> bool {
        true
    }

    /// Two hidden layers of 30 units with layer normalisation and
    /// standardised inputs.
    pub fn blob(input_dim: usize) -> Self {
        Architecture {
            input_dim,
            hidden: Self::default_hidden(),
            layer_norm: true,
            standardize_inputs: true,
        }
    }
}

/// Fixed affine map `(x − shift) / scale` applied to the raw input. Not a
/// trainable parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputScaling {
    /// Per-feature mean and standard deviation of `data`; a zero deviation
    /// becomes one.
    pub fn fit(data: &[LabeledSample]) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::usage("cannot fit input scaling on an empty set"));
        };
        let (d, n) = (first.x.len(), data.len() as f64);
        let mut shift = vec![0.0; d];
        for s in data {
            for (m, v) in shift.iter_mut().zip(&s.x) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for s in data {
            for ((q, v), m) in scale.iter_mut().zip(&s.x).zip(&shift) {
                *q += (v - m) * (v - m) / n;
            }
        }
        for q in &mut scale {
            *q = if *q > 0.0 { q.sqrt() } else { 1.0 };
        }
        Ok(InputScaling { shift, scale })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_scaling: Option<InputScaling>,
}

/// Per-example forward cache for backpropagation.
struct Trace {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Normalised pre-activations `x̂` per hidden layer (empty without norm).
    normalized: Vec<Vec<f64>>,
    /// `1/√(var + eps)` per hidden layer.
    inv_std: Vec<f64>,
    /// Values entering the ReLU per hidden layer.
    pre_relu: Vec<Vec<f64>>,
    logit: f64,
}

impl MlpModel {
    /// Builds a model from explicit layers after checking shapes.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let model = MlpModel {
            layers,
            input_scaling: None,
        };
        model.validate()?;
        Ok(model)
    }

    /// All-zero network of the given shape (layer-norm gains set to one).
    pub fn zeros(arch: &Architecture) -> Self {
        let mut layers = Vec::new();
        let mut input = arch.input_dim;
        for &h in &arch.hidden {
            layers.push(Layer::zeros(input, h, arch.layer_norm));
            input = h;
        }
        layers.push(Layer::zeros(input, 1, false));
        MlpModel {
            layers,
            input_scaling: None,
        }
    }

    /// Uniform `(-1/√fan_in, 1/√fan_in)` initialisation for weights and biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut model = Self::zeros(arch);
        let mut rng = seed::rng(seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.input_dim as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.random_range(-bound..bound);
            }
        }
        model
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::usage("a model needs at least one layer"));
        };
        if last.output_dim != 1 || last.norm.is_some() {
            return Err(Error::usage("the output layer must be a single un-normalised logit"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.input_dim * l.output_dim || l.bias.len() != l.output_dim {
                return Err(Error::usage(format!("layer {i}: parameter shape mismatch")));
            }
            if let Some(n) = &l.norm {
                if n.gain.len() != l.output_dim || n.shift.len() != l.output_dim {
                    return Err(Error::usage(format!("layer {i}: layer-norm shape mismatch")));
                }
            }
            if i + 1 < self.layers.len() && self.layers[i + 1].input_dim != l.output_dim {
                return Err(Error::usage(format!("layers {i} and {} do not chain", i + 1)));
            }
        }
        if self.flat_params().iter().any(|p| !p.is_finite()) {
            return Err(Error::usage("model parameters must be finite"));
        }
        if let Some(sc) = &self.input_scaling {
            if sc.shift.len() != self.input_dim() || sc.scale.len() != self.input_dim() {
                return Err(Error::usage("input scaling does not match the input width"));
            }
            if sc.shift.iter().chain(&sc.scale).any(|v| !v.is_finite()) || sc.scale.iter().any(|v| *v <= 0.0) {
                return Err(Error::usage("input scaling must be finite with positive scales"));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_scaling(&self) -> Option<&InputScaling> {
        self.input_scaling.as_ref()
    }

    pub fn set_input_scaling(&mut self, scaling: Option<InputScaling>) -> Result<()> {
        let previous = std::mem::replace(&mut self.input_scaling, scaling);
        if let Err(e) = self.validate() {
            self.input_scaling = previous;
            return Err(e);
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    /// Width of the last hidden layer (the feature tap), or the input width
    /// for a network without hidden layers.
    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].input_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::usage(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let hidden = self.layers.len() - 1;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            normalized: Vec::with_capacity(hidden),
            inv_std: Vec::with_capacity(hidden),
            pre_relu: Vec::with_capacity(hidden),
            logit: 0.0,
        };
        let mut current = match &self.input_scaling {
            Some(sc) => sc.apply(x),
            None => x.to_vec(),
        };
        let mut z = Vec::new();
        for layer in &self.layers[..hidden] {
            layer.affine(&current, &mut z);
            let pre = match &layer.norm {
                Some(norm) => {
                    let (xhat, inv_std) = normalize(&z);
                    let out = xhat
                        .iter()
                        .zip(norm.gain.iter().zip(&norm.shift))
                        .map(|(v, (g, s))| g * v + s)
                        .collect();
                    trace.normalized.push(xhat);
                    trace.inv_std.push(inv_std);
                    out
                }
                None => {
                    trace.normalized.push(Vec::new());
                    trace.inv_std.push(1.0);
                    z.clone()
                }
            };
            let next = pre.iter().map(|v| v.max(0.0)).collect();
            trace.pre_relu.push(pre);
            trace.inputs.push(std::mem::replace(&mut current, next));
        }
        self.layers[hidden].affine(&current, &mut z);
        trace.inputs.push(current);
        trace.logit = z[0];
        trace
    }

    /// Output logit `g(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).logit)
    }

    /// `σ(g(x))` clamped to `[1e-7, 1 − 1e-7]`.
    pub fn predict_prob(&self, x: &[f64]) -> Result<f64> {
        Ok(clamped_sigmoid(self.forward(x)?))
    }

    /// Activations of the last hidden layer (after ReLU).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = self.trace(x);
        Ok(trace.inputs.pop().unwrap_or_default())
    }

    /// Normalised pre-activations `x̂` of every hidden layer, before gain and
    /// shift. Empty vectors for layers without normalisation.
    pub fn normalized_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        Ok(self.trace(x).normalized)
    }

    /// Mean binary cross-entropy (nats) on `data`.
    pub fn loss(&self, data: &[LabeledSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::usage("loss of an empty set"));
        }
        let mut total = 0.0;
        for s in data {
            total += bce_with_logit(self.forward(&s.x)?, s.y);
        }
        Ok(total / data.len() as f64)
    }

    /// Mean binary cross-entropy and its gradient with respect to every
    /// parameter, returned as a model of the same shape.
    pub fn loss_and_gradient(&self, data: &[LabeledSample]) -> Result<(f64, MlpModel)> {
        if data.is_empty() {
            return Err(Error::usage("gradient of an empty set"));
        }
        let mut grad = self.zeroed();
        let mut total = 0.0;
        let scale = 1.0 / data.len() as f64;
        for s in data {
            self.check_input(&s.x)?;
            let trace = self.trace(&s.x);
            total += bce_with_logit(trace.logit, s.y);
            self.backprop(&trace, (sigmoid(trace.logit) - s.y as f64) * scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    fn backprop(&self, trace: &Trace, dlogit: f64, grad: &mut MlpModel) {
        let hidden = self.layers.len() - 1;
        // d(loss)/d(output of the current layer)
        let mut delta = vec![dlogit];
        for li in (0..=hidden).rev() {
            let layer = &self.layers[li];
            let g = &mut grad.layers[li];
            if li < hidden {
                // Back through ReLU, then layer norm.
                for (d, p) in delta.iter_mut().zip(&trace.pre_relu[li]) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let (Some(norm), Some(gnorm)) = (&layer.norm, g.norm.as_mut()) {
                    let xhat = &trace.normalized[li];
                    let n = xhat.len() as f64;
                    let mut dxhat = Vec::with_capacity(xhat.len());
                    for k in 0..xhat.len() {
                        gnorm.gain[k] += delta[k] * xhat[k];
                        gnorm.shift[k] += delta[k];
                        dxhat.push(delta[k] * norm.gain[k]);
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                    let inv_std = trace.inv_std[li];
                    for k in 0..xhat.len() {
                        delta[k] = inv_std * (dxhat[k] - mean_d - xhat[k] * mean_dx);
                    }
                }
            }
            let input = &trace.inputs[li];
            let mut next = vec![0.0; layer.input_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * layer.input_dim;
                for j in 0..layer.input_dim {
                    g.weights[row + j] += d * input[j];
                    next[j] += d * layer.weights[row + j];
                }
            }
            delta = next;
        }
    }

    fn zeroed(&self) -> MlpModel {
        let mut out = self.clone();
        for p in out.param_slices_mut() {
            p.fill(0.0);
        }
        out
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(&l.weights);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gain);
                out.push(&n.shift);
            }
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gain);
                out.push(&mut n.shift);
            }
        }
        out
    }

    /// All parameters in a fixed order (per layer: weights, bias, gain, shift).
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Inverse of [`flat_params`](Self::flat_params).
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&params[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Serialises to the versioned JSON model format.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: MlpModel,
}

/// Returns `x̂ = (z − mean)/√(var + eps)` and `1/√(var + eps)`.
fn normalize(z: &[f64]) -> (Vec<f64>, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (z.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn clamped_sigmoid(t: f64) -> f64 {
    sigmoid(t).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−[y ln σ(t) + (1−y) ln(1−σ(t))]`, stable for large `|t|`.
pub fn bce_with_logit(t: f64, y: u8) -> f64 {
    t.max(0.0) - t * y as f64 + (-t.abs()).exp().ln_1p()
}

/// Optimiser and early-stopping settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Training stops once this many consecutive epochs fail to improve the
    /// validation loss (`0` stops at the first non-improving epoch).
    pub patience: usize,
    pub minibatch_size: usize,
    /// Training sets up to this size use full-batch steps.
    pub full_batch_max: usize,
    pub seed: u64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            max_epochs: 200,
            patience: 20,
            minibatch_size: 64,
            full_batch_max: 512,
            seed: 0,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::usage("learning rate must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::usage("patience cannot exceed max_epochs"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::usage("minibatch size must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::usage("invalid Adam hyper-parameters"));
        }
        Ok(())
    }
}

/// Per-epoch losses of a training call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// Validation loss of the returned parameters.
    pub best_val_loss: f64,
    /// Epoch (1-based) whose parameters were kept; `0` means the starting
    /// parameters were never beaten.
    pub best_epoch: usize,
}

struct Adam {
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            first: vec![0.0; n],
            second: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        let (b1, b2) = cfg.adam_betas;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for i in 0..params.len() {
            self.first[i] = b1 * self.first[i] + (1.0 - b1) * grad[i];
            self.second[i] = b2 * self.second[i] + (1.0 - b2) * grad[i] * grad[i];
            let m = self.first[i] / c1;
            let v = self.second[i] / c2;
            params[i] -= cfg.learning_rate * m / (v.sqrt() + cfg.adam_eps);
        }
    }
}

fn check_labeled(set: &[LabeledSample], what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::usage(format!("{what} set is empty")));
    }
    if set.iter().any(|s| s.y > 1) {
        return Err(Error::usage(format!("{what} set has labels outside {{0, 1}}")));
    }
    Ok(())
}

/// Trains a freshly initialised network.
pub fn train(
    arch: &Architecture,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    let mut init = MlpModel::init(arch, seed::derive(config.seed, &[0]));
    if arch.standardize_inputs {
        check_labeled(train_set, "training")?;
        init.set_input_scaling(Some(InputScaling::fit(train_set)?))?;
    }
    train_from(init, train_set, val_set, config)
}

/// Continues training from `model`. The starting parameters count as the
/// first candidate for early stopping, so the result never has a worse
/// validation loss than the input.
pub fn train_from(
    mut model: MlpModel,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    check_labeled(train_set, "training")?;
    check_labeled(val_set, "validation")?;
    model.validate()?;

    let mut best_val = model.loss(val_set)?;
    if !best_val.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            message: format!("initial validation loss is {best_val}"),
        });
    }
    let mut best = model.flat_params();
    let mut report = TrainReport {
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_val_loss: best_val,
        best_epoch: 0,
    };

    let mut params = model.flat_params();
    let mut adam = Adam::new(params.len());
    let mut rng = seed::child_rng(config.seed, &[1]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let step = if train_set.len() <= config.full_batch_max {
        train_set.len()
    } else {
        config.minibatch_size
    };
    let mut since_improved = 0;
    let mut minibatch = Vec::with_capacity(step);

    for epoch in 1..=config.max_epochs {
        if step < train_set.len() {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(step) {
            minibatch.clear();
            minibatch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grad) = model.loss_and_gradient(&minibatch)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!(
                        "non-finite training loss {loss} (learning rate {}, {} samples)",
                        config.learning_rate,
                        minibatch.len()
                    ),
                });
            }
            epoch_loss += loss;
            batches += 1;
            adam.apply(&mut params, &grad.flat_params(), config);
            model.set_flat_params(&params)?;
        }
        report.train_losses.push(epoch_loss / batches as f64);

        let val = model.loss(val_set)?;
        if !val.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("non-finite validation loss {val}"),
            });
        }
        report.val_losses.push(val);
        if val < best_val {
            best_val = val;
            best.clone_from(&params);
            report.best_epoch = epoch;
            since_improved = 0;
        } else {
            since_improved += 1;
            if since_improved >= config.patience {
                break;
            }
        }
    }
    model.set_flat_params(&best)?;
    report.best_val_loss = best_val;
    Ok((model, report))
}
