//! Binary classifiers trained from scratch: a ReLU feed-forward network with
//! inverted dropout on hidden activations, and logistic regression.
//!
//! Both minimize mean binary cross-entropy plus `l2 / 2 * sum(w^2)` over the
//! weight matrices (biases are not penalized) with mini-batch SGD and
//! optional momentum. Weight matrices are stored `inputs x outputs`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{LabeledMatrix, NormStats};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Hidden widths for `mlp`; ignored by `logistic`.
    pub hidden_layers: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Mlp,
            hidden_layers: vec![64, 32],
            dropout: 0.2,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 64,
            l2: 1e-4,
            seed: 11,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return bad("l2 must be non-negative");
        }
        if self.architecture == Architecture::Mlp && self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be >= 1");
        }
        Ok(())
    }

    fn hidden(&self) -> &[usize] {
        match self.architecture {
            Architecture::Mlp => &self.hidden_layers,
            Architecture::Logistic => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Layers from input to the single sigmoid output; all but the last use ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Gradients with the same shapes as a [`Network`]'s layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Seeded initialization. Hidden layers draw U(-a, a) with
    /// a = sqrt(6 / fan_in); the output layer uses a = sqrt(1 / fan_in).
    /// Logistic models start at zero. Biases start at zero.
    pub fn init(config: &ModelConfig, inputs: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut widths = vec![inputs];
        widths.extend_from_slice(config.hidden());
        widths.push(1);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let weights = match config.architecture {
                    Architecture::Logistic => Array2::zeros((fan_in, fan_out)),
                    Architecture::Mlp => {
                        let gain = if k == last { 1.0 } else { 6.0 };
                        let limit = (gain / fan_in.max(1) as f64).sqrt();
                        Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit))
                    }
                };
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Output logit for one row, by plain loops so that single-row and
    /// batch inference agree bit for bit.
    pub fn logit(&self, features: &[f64]) -> f64 {
        let mut act: Vec<f64> = features.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.to_vec();
            for (i, &a) in act.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, w) in layer.weights.row(i).iter().enumerate() {
                    next[o] += a * w;
                }
            }
            if k != last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            act = next;
        }
        act[0]
    }

    /// Mean penalized cross-entropy and its gradient on a batch.
    ///
    /// With `dropout = Some((rng, p))` every hidden activation is zeroed with
    /// probability p and survivors are scaled by 1 / (1 - p).
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: &[f64],
        l2: f64,
        mut dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> (f64, Gradients) {
        let n = x.nrows() as f64;
        let last = self.layers.len() - 1;
        // inputs to each layer, and the pre-activation masks of hidden layers
        let mut inputs: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let mut masks: Vec<Array2<f64>> = Vec::with_capacity(last);
        let mut act = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weights) + &layer.bias;
            inputs.push(act);
            if k != last {
                let mut mask = z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                if let Some((rng, p)) = dropout.as_mut() {
                    let keep = 1.0 / (1.0 - *p);
                    mask.mapv_inplace(|m| if rng.random_bool(*p) { 0.0 } else { m * keep });
                }
                z.zip_mut_with(&mask, |v, &m| *v = if m > 0.0 { *v * m } else { 0.0 });
                masks.push(mask);
            }
            act = z;
        }

        let logits = act.column(0);
        let mut loss = 0.0;
        let mut delta = Array2::zeros((x.nrows(), 1));
        for (r, (&z, &t)) in logits.iter().zip(y).enumerate() {
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            delta[[r, 0]] = (sigmoid(z) - t) / n;
        }
        loss /= n;
        loss += 0.5 * l2 * self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum::<f64>();

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let weights = inputs[k].t().dot(&delta) + &(&layer.weights * l2);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&layer.weights.t());
                back *= &masks[k - 1];
                delta = back;
            }
            grads.push(Layer { weights, bias });
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

impl Gradients {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub architecture: Architecture,
    pub network: Network,
    /// Standardization the training rows had; scoring rows must match it.
    pub normalization: NormStats,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    /// Mean epoch loss, in order.
    pub loss_history: Vec<f64>,
    /// Full-batch loss without dropout after the last epoch.
    pub final_loss: f64,
}

fn design(matrix: &LabeledMatrix) -> Result<(Array2<f64>, Vec<f64>)> {
    let width = matrix.width();
    let mut x = Array2::zeros((matrix.len(), width));
    for (r, row) in matrix.rows.iter().enumerate() {
        if row.features.len() != width {
            return Err(Error::Dimension {
                expected: width,
                found: row.features.len(),
            });
        }
        if let Some(col) = row.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(col));
        }
        x.row_mut(r).assign(&ndarray::aview1(&row.features));
    }
    let y = matrix.rows.iter().map(|r| f64::from(r.label)).collect();
    Ok((x, y))
}

pub fn train(matrix: &LabeledMatrix, config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    let positives = matrix.positives();
    if positives == 0 || positives == matrix.len() {
        return Err(Error::Untrainable(format!(
            "single-class input ({positives} positives of {} rows)",
            matrix.len()
        )));
    }
    let (x, y) = design(matrix)?;
    let mut net = Network::init(config, matrix.width());
    let mut velocity: Vec<Layer> = net
        .layers
        .iter()
        .map(|l| Layer {
            weights: Array2::zeros(l.weights.raw_dim()),
            bias: Array1::zeros(l.bias.len()),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005E_ED0F_D20F);
    // Canonical (patient, index day) order makes training independent of
    // how the matrix rows happen to be arranged.
    let mut order: Vec<usize> = (0..matrix.len()).collect();
    order.sort_by_key(|&i| (matrix.rows[i].patient_id, matrix.rows[i].index_day));
    let mut history = Vec::with_capacity(config.epochs);
    let use_dropout = config.dropout > 0.0 && config.architecture == Architecture::Mlp;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let dropout = use_dropout.then_some((&mut rng, config.dropout));
            let (loss, grads) = net.loss_and_gradient(xb.view(), &yb, config.l2, dropout);
            total += loss * batch.len() as f64;
            for ((layer, vel), grad) in net.layers.iter_mut().zip(&mut velocity).zip(&grads.layers) {
                vel.weights.zip_mut_with(&grad.weights, |v, g| {
                    *v = config.momentum * *v - config.learning_rate * g
                });
                vel.bias.zip_mut_with(&grad.bias, |v, g| {
                    *v = config.momentum * *v - config.learning_rate * g
                });
                layer.weights += &vel.weights;
                layer.bias += &vel.bias;
            }
        }
        let mean = total / matrix.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    let (final_loss, _) = net.loss_and_gradient(x.view(), &y, config.l2, None);
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: config.epochs,
            loss: final_loss,
        });
    }

    Ok(TrainedModel {
        architecture: config.architecture,
        network: net,
        normalization: matrix
            .normalization
            .clone()
            .unwrap_or_else(|| NormStats {
                mean: vec![0.0; matrix.width()],
                stdev: vec![1.0; matrix.width()],
            }),
        config: config.clone(),
        feature_names: matrix.feature_names.clone(),
        loss_history: history,
        final_loss,
    })
}

/// Probability of the positive class for one row in the model's input space.
pub fn predict(model: &TrainedModel, features: &[f64]) -> Result<f64> {
    let width = model.network.inputs();
    if features.len() != width {
        return Err(Error::Dimension {
            expected: width,
            found: features.len(),
        });
    }
    if let Some(col) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(col));
    }
    Ok(sigmoid(model.network.logit(features)))
}

pub fn predict_batch<'a>(
    model: &TrainedModel,
    rows: impl IntoIterator<Item = &'a [f64]>,
) -> Result<Vec<f64>> {
    rows.into_iter().map(|r| predict(model, r)).collect()
}

/// Scores every row of a matrix built with the model's feature layout.
pub fn score_matrix(model: &TrainedModel, matrix: &LabeledMatrix) -> Result<Vec<f64>> {
    if matrix.feature_names != model.feature_names {
        return Err(Error::Config(format!(
            "matrix features ({} columns, mode {}) do not match the model's {} columns",
            matrix.width(),
            matrix.mode,
            model.feature_names.len()
        )));
    }
    predict_batch(model, matrix.rows.iter().map(|r| r.features.as_slice()))
}

/// Largest relative error between analytic and central-difference gradients
/// of the training loss, over every parameter, at the network `config`
/// initializes to. Dropout is off.
pub fn gradient_check(config: &ModelConfig, sample: &LabeledMatrix, epsilon: f64) -> Result<f64> {
    config.validate()?;
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let net = Network::init(config, sample.width());
    let (x, y) = design(sample)?;
    Ok(gradient_check_at(&net, x.view(), &y, config.l2, epsilon))
}

/// [`gradient_check`] at an arbitrary parameter point.
pub fn gradient_check_at(net: &Network, x: ArrayView2<'_, f64>, y: &[f64], l2: f64, epsilon: f64) -> f64 {
    let (_, analytic) = net.loss_and_gradient(x, y, l2, None);
    let analytic: Vec<f64> = analytic.values().collect();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, a) in analytic.into_iter().enumerate() {
        let original = *probe.params_mut().nth(k).expect("parameter index");
        *probe.params_mut().nth(k).unwrap() = original + epsilon;
        let (up, _) = probe.loss_and_gradient(x, y, l2, None);
        *probe.params_mut().nth(k).unwrap() = original - epsilon;
        let (down, _) = probe.loss_and_gradient(x, y, l2, None);
        *probe.params_mut().nth(k).unwrap() = original;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / scale);
    }
    worst
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs x outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    architecture: Architecture,
    layers: Vec<LayerFile>,
    normalization: NormStats,
    config: ModelConfig,
    feature_names: Vec<String>,
    loss_history: Vec<f64>,
    final_loss: f64,
}

impl TrainedModel {
    /// Standardizes raw features with the training statistics.
    pub fn standardize(&self, raw: &mut [f64]) {
        self.normalization.apply(raw);
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            architecture: self.architecture,
            layers: self
                .network
                .layers
                .iter()
                .map(|l| LayerFile {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            normalization: self.normalization.clone(),
            config: self.config.clone(),
            feature_names: self.feature_names.clone(),
            loss_history: self.loss_history.clone(),
            final_loss: self.final_loss,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut expected_inputs = file.feature_names.len();
        for l in file.layers {
            if l.inputs != expected_inputs || l.bias.len() != l.outputs {
                return Err(Error::Dimension {
                    expected: expected_inputs,
                    found: l.inputs,
                });
            }
            let weights = Array2::from_shape_vec((l.inputs, l.outputs), l.weights).map_err(|_| {
                Error::Config("weight array does not match its declared shape".into())
            })?;
            expected_inputs = l.outputs;
            layers.push(Layer {
                weights,
                bias: Array1::from(l.bias),
            });
        }
        if layers.is_empty() || expected_inputs != 1 {
            return Err(Error::Config("network must end in a single output".into()));
        }
        if file.normalization.width() != file.feature_names.len() {
            return Err(Error::Dimension {
                expected: file.feature_names.len(),
                found: file.normalization.width(),
            });
        }
        Ok(Self {
            architecture: file.architecture,
            network: Network { layers },
            normalization: file.normalization,
            config: file.config,
            feature_names: file.feature_names,
            loss_history: file.loss_history,
            final_loss: file.final_loss,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
