//! Multi-layer perceptron classifier with hand-derived backpropagation.
//!
//! Hidden layers use ReLU, the output layer softmax, and the loss is mean
//! cross-entropy. Parameters flatten layer by layer, each layer contributing
//! its weight matrix (row-major, `out × in`) followed by its bias vector.

mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointError, CHECKPOINT_MAGIC};

use crate::data::DataView;
use crate::seed;
use crate::vecspace::GradientVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: u8, classes: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid trainer config: {0}")]
    InvalidTrainer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Input dimension, hidden widths..., class count.
    pub layer_sizes: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self, ModelError> {
        let spec = Self { layer_sizes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mlp(input: usize, hidden: &[usize], classes: usize) -> Result<Self, ModelError> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self::new(sizes)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layer_sizes.len() < 2 {
            return Err(ModelError::InvalidSpec(
                "need at least input and output layers".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(ModelError::InvalidSpec(
                "layer sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer {
                weights: Array2::zeros((w[1], w[0])),
                biases: Array1::zeros(w[1]),
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = seed::rng_for(seed, &[seed::stream::INIT]);
        let mut params = Self::zeros(spec);
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.weights.ncols() as f64).sqrt();
            layer
                .weights
                .iter_mut()
                .chain(layer.biases.iter_mut())
                .for_each(|v| *v = rng.random_range(-bound..bound));
        }
        params
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.spec.n_params()
    }

    pub fn flatten(&self) -> GradientVector {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend(layer.weights.iter());
            out.extend(layer.biases.iter());
        }
        GradientVector::new(out).expect("parameters stay finite")
    }

    pub fn unflatten(spec: &ModelSpec, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != spec.n_params() {
            return Err(ModelError::DimensionMismatch {
                expected: spec.n_params(),
                found: flat.len(),
            });
        }
        let mut params = Self::zeros(spec);
        let mut rest = flat;
        for layer in &mut params.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            let (b, tail) = tail.split_at(layer.biases.len());
            layer.weights.iter_mut().zip(w).for_each(|(d, s)| *d = *s);
            layer.biases.iter_mut().zip(b).for_each(|(d, s)| *d = *s);
            rest = tail;
        }
        Ok(params)
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), ModelError> {
        if x.ncols() != self.spec.input_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.spec.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weights.t()) + &layer.biases;
            if l < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        softmax_rows(&mut h);
        Ok(h)
    }

    /// Mean cross-entropy and its exact gradient w.r.t. the flattened
    /// parameters.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        labels: &[u8],
    ) -> Result<(f64, GradientVector), ModelError> {
        let (loss, grads) = self.loss_and_grads(x, labels)?;
        let mut flat = Vec::with_capacity(self.n_params());
        for g in &grads {
            flat.extend(g.weights.iter());
            flat.extend(g.biases.iter());
        }
        Ok((loss, GradientVector::new(flat).expect("finite gradient")))
    }

    fn loss_and_grads(
        &self,
        x: ArrayView2<f64>,
        labels: &[u8],
    ) -> Result<(f64, Vec<Layer>), ModelError> {
        self.check_input(&x)?;
        if labels.len() != x.nrows() {
            return Err(ModelError::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        let classes = self.spec.n_classes();
        if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(ModelError::InvalidLabel { label, classes });
        }
        let n = x.nrows();
        if n == 0 {
            return Err(ModelError::EmptyDataset);
        }

        // activations[l] is the input to layer l
        let last = self.layers.len() - 1;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weights.t()) + &layer.biases;
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(h);
            h = z;
        }
        let mut logits = h;
        let mut loss = 0.0;
        for (mut row, &y) in logits.rows_mut().into_iter().zip(labels) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y as usize];
            row.mapv_inplace(|v| (v - lse).exp());
        }
        loss /= n as f64;

        // d loss / d logits = (softmax - onehot) / n
        let mut delta = logits;
        for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
            row[y as usize] -= 1.0;
        }
        delta.mapv_inplace(|v| v / n as f64);

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &activations[l];
            let weights = delta.t().dot(input);
            let biases = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                // ReLU mask from the stored post-activation of layer l-1
                ndarray::Zip::from(&mut back).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights, biases });
        }
        grads.reverse();
        Ok((loss, grads))
    }
}

fn softmax_rows(h: &mut Array2<f64>) {
    for mut row in h.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Local SGD hyper-parameters (PyTorch-style momentum and weight decay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self::mnist()
    }
}

impl TrainerConfig {
    pub fn mnist() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.5,
            weight_decay: 0.0,
            local_epochs: 4,
            batch_size: 32,
        }
    }

    pub fn fashion_mnist() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            ..Self::mnist()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidTrainer(
                "learning_rate must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ModelError::InvalidTrainer(
                "momentum must be in [0, 1)".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ModelError::InvalidTrainer(
                "weight_decay must be >= 0".into(),
            ));
        }
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidTrainer(
                "local_epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Train a copy of `params` on `data` and return the pseudo-gradient
/// `flatten(params) - flatten(trained)`.
///
/// Momentum buffers start at zero on every call.
pub fn local_train(
    params: &ModelParams,
    data: &DataView,
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<GradientVector, ModelError> {
    Ok(train_copy(params, data, cfg, seed)?.1)
}

/// Like [`local_train`] but also returns the trained parameters.
pub fn train_copy(
    params: &ModelParams,
    data: &DataView,
    cfg: &TrainerConfig,
    seed: u64,
) -> Result<(ModelParams, GradientVector), ModelError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if data.dim() != params.spec.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.spec.input_dim(),
            found: data.dim(),
        });
    }
    let mut rng = seed::rng_for(seed, &[seed::stream::LOCAL_TRAIN]);
    let mut w = params.clone();
    let mut velocity = ModelParams::zeros(&params.spec);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(chunk);
            let (_, grads) = w.loss_and_grads(x.view(), &y)?;
            for ((layer, vel), g) in w.layers.iter_mut().zip(&mut velocity.layers).zip(grads) {
                sgd_step(&mut layer.weights, &mut vel.weights, g.weights, cfg);
                sgd_step(&mut layer.biases, &mut vel.biases, g.biases, cfg);
            }
        }
    }
    let delta = params.flatten().sub(&w.flatten()).expect("same spec");
    Ok((w, delta))
}

fn sgd_step<D: ndarray::Dimension>(
    w: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    mut g: ndarray::Array<f64, D>,
    cfg: &TrainerConfig,
) {
    if cfg.weight_decay != 0.0 {
        g.scaled_add(cfg.weight_decay, w);
    }
    if cfg.momentum != 0.0 {
        v.mapv_inplace(|x| x * cfg.momentum);
        *v += &g;
        w.scaled_add(-cfg.learning_rate, v);
    } else {
        w.scaled_add(-cfg.learning_rate, &g);
    }
}

/// `counts[i * C + j]` = samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "square matrix");
        Self {
            n_classes: n,
            counts: rows.concat(),
        }
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.n_classes..(truth + 1) * self.n_classes]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

const EVAL_CHUNK: usize = 512;

/// Accuracy, mean cross-entropy and confusion matrix over a test view.
/// Ties in the argmax go to the lowest class index.
pub fn evaluate(params: &ModelParams, test: &DataView) -> Result<Evaluation, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let classes = params.spec.n_classes();
    let mut confusion = ConfusionMatrix::new(classes);
    let mut loss = 0.0;
    let positions: Vec<usize> = (0..test.len()).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (x, y) = test.batch(chunk);
        let probs = params.forward(x.view())?;
        for (row, &truth) in probs.rows().into_iter().zip(&y) {
            if truth as usize >= classes {
                return Err(ModelError::InvalidLabel {
                    label: truth,
                    classes,
                });
            }
            let predicted = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                    if p > best.1 {
                        (j, p)
                    } else {
                        best
                    }
                })
                .0;
            confusion.add(truth as usize, predicted);
            loss -= row[truth as usize].max(1e-300).ln();
        }
    }
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        loss: loss / test.len() as f64,
        confusion,
    })
}
