//! Binary real/fake detector: a small ReLU MLP with two output logits,
//! softmax cross-entropy and AdamW.
//!
//! Class index 0 is REAL, 1 is FAKE. All arithmetic is `f64` with a fixed
//! summation order, so training is bit-reproducible for a given seed.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapool::{Label, Sample, SampleSet, SampleStore};
use crate::error::{Error, Result};
use crate::rng;

/// Number of output classes.
pub const NUM_CLASSES: usize = 2;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const CHECKPOINT_FORMAT: &str = "activepool-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Pre-softmax outputs `(real, fake)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Logits(pub [f64; NUM_CLASSES]);

impl Logits {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// One affine layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameters (or gradients, or optimizer moments) for every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

impl Params {
    pub fn zeros(layer_dims: &[usize]) -> Params {
        let layers = layer_dims
            .windows(2)
            .map(|w| LayerParams {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Params { layers }
    }

    /// Weight and bias tensors in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.layers.iter().flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn num_values(&self) -> usize {
        self.tensors().map(Vec::len).sum()
    }

    /// Flat copy of all values, in [`Params::tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    fn same_shape(&self, other: &Params) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .tensors()
                .zip(other.tensors())
                .all(|(a, b)| a.len() == b.len())
    }

    fn all_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Params,
    pub second_moment: Params,
}

impl OptimizerState {
    pub fn fresh(layer_dims: &[usize]) -> Self {
        OptimizerState {
            step: 0,
            first_moment: Params::zeros(layer_dims),
            second_moment: Params::zeros(layer_dims),
        }
    }
}

/// The detector: architecture, parameters, AdamW moments and the number of
/// epochs the parameters have been trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    layer_dims: Vec<usize>,
    params: Params,
    optimizer: OptimizerState,
    epoch: u64,
}

impl ModelState {
    /// Assembles a model, checking shapes, finiteness and `J = 2` outputs.
    pub fn new(
        layer_dims: Vec<usize>,
        params: Params,
        optimizer: OptimizerState,
        epoch: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "bad layer dims {layer_dims:?}"
            )));
        }
        if *layer_dims.last().unwrap() != NUM_CLASSES {
            return Err(Error::InvalidInput(format!(
                "output dimension must be {NUM_CLASSES}, got {}",
                layer_dims.last().unwrap()
            )));
        }
        let shape = Params::zeros(&layer_dims);
        if !params.same_shape(&shape)
            || !optimizer.first_moment.same_shape(&shape)
            || !optimizer.second_moment.same_shape(&shape)
        {
            return Err(Error::InvalidInput(
                "parameter shapes do not match layer dims".into(),
            ));
        }
        if !params.all_finite()
            || !optimizer.first_moment.all_finite()
            || !optimizer.second_moment.all_finite()
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(ModelState {
            layer_dims,
            params,
            optimizer,
            epoch,
        })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(layer_dims: Vec<usize>) -> Result<Self> {
        let params = Params::zeros(&layer_dims);
        let optimizer = OptimizerState::fresh(&layer_dims);
        ModelState::new(layer_dims, params, optimizer, 0)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(layer_dims: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let mut model = ModelState::zeros(layer_dims)?;
        for (layer, w) in model
            .params
            .layers
            .iter_mut()
            .zip(model.layer_dims.windows(2))
        {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for v in &mut layer.weights {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access for callers that need to perturb parameters (e.g.
    /// gradient checks). Shapes must be left intact.
    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Runs the network, keeping every layer's activation (input first,
    /// logits last). Hidden activations are post-ReLU.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.params.layers.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for (li, (layer, w)) in self
            .params
            .layers
            .iter()
            .zip(self.layer_dims.windows(2))
            .enumerate()
        {
            let (fan_in, fan_out) = (w[0], w[1]);
            let input = &acts[li];
            let mut out = layer.bias.clone();
            for (o, row) in out.iter_mut().zip(layer.weights.chunks_exact(fan_in)) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if li + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            debug_assert_eq!(out.len(), fan_out);
            acts.push(out);
        }
        acts
    }

    fn logits_unchecked(&self, x: &[f64]) -> Logits {
        let out = self.activations(x).pop().unwrap();
        Logits([out[0], out[1]])
    }
}

pub fn features_f64(sample: &Sample) -> Vec<f64> {
    sample.features.iter().map(|&v| v as f64).collect()
}

/// Pre-softmax logits for one feature vector.
pub fn forward(model: &ModelState, features: &[f64]) -> Result<Logits> {
    model.check_dim(features.len())?;
    Ok(model.logits_unchecked(features))
}

/// Softmax probability of FAKE; higher means more likely fake.
pub fn detection_score(model: &ModelState, features: &[f64]) -> Result<f64> {
    let Logits([real, fake]) = forward(model, features)?;
    Ok(fake_probability(real, fake))
}

pub(crate) fn fake_probability(real: f64, fake: f64) -> f64 {
    let margin = fake - real;
    if margin >= 0.0 {
        1.0 / (1.0 + (-margin).exp())
    } else {
        let e = margin.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(l)))` with max shift.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    log_sum_exp(logits) - logits[class]
}

/// Features and class indices laid out contiguously for training.
struct Batchable {
    dim: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl Batchable {
    fn gather(store: &SampleStore, set: &SampleSet) -> Result<Self> {
        let mut x = Vec::with_capacity(set.len() * store.dim());
        let mut y = Vec::with_capacity(set.len());
        for s in store.resolve_all(set)? {
            x.extend(s.features.iter().map(|&v| v as f64));
            y.push(s.label.class_index());
        }
        Ok(Batchable {
            dim: store.dim(),
            x,
            y,
        })
    }

    fn from_samples(samples: &[&Sample]) -> Self {
        let dim = samples.first().map_or(0, |s| s.features.len());
        let mut x = Vec::with_capacity(samples.len() * dim);
        let mut y = Vec::with_capacity(samples.len());
        for s in samples {
            x.extend(s.features.iter().map(|&v| v as f64));
            y.push(s.label.class_index());
        }
        Batchable { dim, x, y }
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Mean loss and gradient over the rows in `idx`.
fn batch_gradient(model: &ModelState, data: &Batchable, idx: &[usize]) -> (f64, Params) {
    let n_layers = model.params.layers.len();
    let mut grad = Params::zeros(&model.layer_dims);
    let mut total = 0.0;
    let scale = 1.0 / idx.len() as f64;
    for &i in idx {
        let acts = model.activations(data.row(i));
        let logits = &acts[n_layers];
        let class = data.y[i];
        total += cross_entropy(logits, class);

        // d loss / d logits = softmax - onehot
        let lse = log_sum_exp(logits);
        let mut delta: Vec<f64> = logits.iter().map(|l| (l - lse).exp() * scale).collect();
        delta[class] -= scale;

        for li in (0..n_layers).rev() {
            let fan_in = model.layer_dims[li];
            let input = &acts[li];
            let g = &mut grad.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                let row = &mut g.weights[o * fan_in..(o + 1) * fan_in];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if li > 0 {
                let weights = &model.params.layers[li].weights;
                let mut prev = vec![0.0; fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    for (p, w) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += w * d;
                    }
                }
                // ReLU derivative; `input` is the post-ReLU activation
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    (total * scale, grad)
}

/// Mean softmax cross-entropy of `batch` and its gradient w.r.t. every
/// parameter.
pub fn loss_and_gradient(model: &ModelState, batch: &[&Sample]) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for s in batch {
        model.check_dim(s.features.len())?;
    }
    let data = Batchable::from_samples(batch);
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(batch_gradient(model, &data, &idx))
}

fn mean_loss(model: &ModelState, data: &Batchable) -> f64 {
    let total: f64 = (0..data.len())
        .map(|i| cross_entropy(model.logits_unchecked(data.row(i)).values(), data.y[i]))
        .sum();
    total / data.len() as f64
}

/// Mean cross-entropy of `model` over `set`.
pub fn evaluate_loss(model: &ModelState, store: &SampleStore, set: &SampleSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    model.check_dim(store.dim())?;
    Ok(mean_loss(model, &Batchable::gather(store, set)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            weight_decay: 0.01,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            hidden_width: 32,
        }
    }
}

impl TrainConfig {
    /// Fine-tuning defaults: three epochs per iteration.
    pub fn finetune_default() -> Self {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    /// Checks the config; `section` prefixes key names in errors.
    pub fn validate(&self, section: &str) -> Result<()> {
        let key = |k: &str| format!("{section}.{k}");
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(
                key("learning_rate"),
                "must be finite and >= 0",
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config(
                key("weight_decay"),
                "must be finite and >= 0",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config(key("batch_size"), "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config(key("epochs"), "must be at least 1"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config(key("hidden_width"), "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Result of [`train_from_scratch`]: the best-validation snapshot and the
/// per-epoch history it was chosen from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelState,
    pub best_epoch: u64,
    pub history: Vec<EpochStats>,
}

fn check_trainable(data: &Batchable, what: &str) -> Result<()> {
    if data.len() == 0 {
        return Err(Error::InvalidInput(format!("{what} set is empty")));
    }
    let fakes = data
        .y
        .iter()
        .filter(|&&c| c == Label::Fake.class_index())
        .count();
    if fakes == 0 || fakes == data.len() {
        return Err(Error::InvalidInput(format!(
            "{what} set contains a single class"
        )));
    }
    Ok(())
}

/// One AdamW step with decoupled weight decay.
fn adamw_step(model: &mut ModelState, grad: &Params, cfg: &TrainConfig) {
    let opt = &mut model.optimizer;
    opt.step += 1;
    let t = opt.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = cfg.learning_rate;
    let decay = 1.0 - lr * cfg.weight_decay;
    let tensors = model
        .params
        .tensors_mut()
        .zip(opt.first_moment.tensors_mut())
        .zip(opt.second_moment.tensors_mut())
        .zip(grad.tensors());
    for (((p, m), v), g) in tensors {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// One pass over `data` in shuffled mini-batches; returns the mean batch
/// loss. The last partial batch is kept.
fn run_epoch(
    model: &mut ModelState,
    data: &Batchable,
    cfg: &TrainConfig,
    order: &mut [usize],
    rng: &mut impl Rng,
) -> f64 {
    order.shuffle(rng);
    let batch = cfg.batch_size.min(data.len());
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch) {
        let (loss, grad) = batch_gradient(model, data, chunk);
        adamw_step(model, &grad, cfg);
        total += loss;
        batches += 1;
    }
    model.epoch += 1;
    total / batches as f64
}

/// Trains a freshly initialized `[d, hidden_width, 2]` model and returns the
/// epoch snapshot with the lowest validation loss (earliest on ties).
pub fn train_from_scratch(
    store: &SampleStore,
    train: &SampleSet,
    val: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    cfg.validate("train")?;
    let data = Batchable::gather(store, train)?;
    check_trainable(&data, "training")?;
    if val.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let val_data = Batchable::gather(store, val)?;

    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut model = ModelState::init(
        vec![store.dim(), cfg.hidden_width, NUM_CLASSES],
        &mut init_rng,
    )?;
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut best: Option<(f64, ModelState)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let train_loss = run_epoch(&mut model, &data, cfg, &mut order, &mut shuffle_rng);
        let val_loss = mean_loss(&model, &val_data);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss at epoch {}",
                model.epoch
            )));
        }
        log::debug!(
            "epoch {:>3}: train {train_loss:.5} val {val_loss:.5}",
            model.epoch
        );
        history.push(EpochStats {
            epoch: model.epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok(TrainedModel {
        best_epoch: model.epoch,
        model,
        history,
    })
}

/// Fine-tunes `model` on the full `train` set for `cfg.epochs` epochs with
/// freshly reset optimizer moments and returns the final-epoch parameters.
pub fn continuous_train(
    model: &ModelState,
    store: &SampleStore,
    train: &SampleSet,
    cfg: &TrainConfig,
) -> Result<ModelState> {
    cfg.validate("finetune")?;
    model.check_dim(store.dim())?;
    let data = Batchable::gather(store, train)?;
    check_trainable(&data, "training")?;

    let mut model = model.clone();
    model.optimizer = OptimizerState::fresh(&model.layer_dims);
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        run_epoch(&mut model, &data, cfg, &mut order, &mut shuffle_rng);
    }
    if !model.params.all_finite() {
        return Err(Error::NonFinite("parameters after fine-tuning".into()));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    epoch: u64,
    params: Params,
    optimizer: OptimizerState,
}

/// Serializes the model as a JSON document. Floats are written in their
/// shortest round-trip form, so loading reproduces every bit.
pub fn checkpoint_to_string(model: &ModelState) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layer_dims: model.layer_dims.clone(),
        epoch: model.epoch,
        params: model.params.clone(),
        optimizer: model.optimizer.clone(),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn checkpoint_from_str(text: &str, origin: &Path) -> Result<ModelState> {
    let err = |msg: String| Error::Checkpoint {
        path: origin.to_path_buf(),
        msg,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| err(format!("unreadable: {e}")))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(err("not a checkpoint file".into()));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == CHECKPOINT_VERSION as u64 => {}
        Some(v) => {
            return Err(err(format!(
                "unsupported checkpoint version {v} (this build reads version {CHECKPOINT_VERSION})"
            )))
        }
        None => return Err(err("missing version field".into())),
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| err(format!("malformed: {e}")))?;
    ModelState::new(file.layer_dims, file.params, file.optimizer, file.epoch)
        .map_err(|e| err(e.to_string()))
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}
