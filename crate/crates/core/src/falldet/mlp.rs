//! Small fully connected classifier with ReLU hidden layers and a softmax
//! output, trained by mini-batch gradient descent on cross-entropy.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FallDetError, PoseDetection, DEFAULT_KEYPOINT_THRESHOLD, KEYPOINT_COUNT};

/// Layer widths of the fall classifier: 17 (x, y) pairs in, fall / not-fall out.
pub const FALL_CLASSIFIER_SIZES: [usize; 4] = [2 * KEYPOINT_COUNT, 20, 20, 2];
/// Output index of the "fallen" class.
pub const FALL_CLASS: usize = 0;
/// Output index of the "not fallen" class.
pub const NOT_FALL_CLASS: usize = 1;

/// Dense layer `y = W x + b`, `W` stored row-major with `rows` outputs and
/// `cols` inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    sizes: Vec<usize>,
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// Validates that the layers chain and that every entry is finite.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, FallDetError> {
        if layers.is_empty() {
            return Err(FallDetError::ShapeMismatch("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.rows == 0 || l.cols == 0 {
                return Err(FallDetError::ShapeMismatch(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(FallDetError::ShapeMismatch(format!(
                    "layer {i}: {}x{} needs {} weights and {} biases, found {} and {}",
                    l.rows,
                    l.cols,
                    l.rows * l.cols,
                    l.rows,
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(FallDetError::ShapeMismatch(format!("layer {i} has non-finite entries")));
            }
            if i > 0 && layers[i - 1].rows != l.cols {
                return Err(FallDetError::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    l.cols,
                    i - 1,
                    layers[i - 1].rows
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, FallDetError> {
        if sizes.len() < 2 {
            return Err(FallDetError::ShapeMismatch("need at least two layer sizes".into()));
        }
        Self::from_layers(sizes.windows(2).map(|w| DenseLayer::zeros(w[1], w[0])).collect())
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(sizes: &[usize], seed: u64) -> Result<Self, FallDetError> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut net.layers {
            let a = (6.0 / (l.rows + l.cols) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].cols)
            .chain(self.layers.iter().map(|l| l.rows))
            .collect()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    fn check_input(&self, x: &[f64]) -> Result<(), FallDetError> {
        if x.len() != self.input_size() {
            return Err(FallDetError::ShapeMismatch(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    /// Pre-softmax outputs.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, FallDetError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            l.apply(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Class probabilities.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, FallDetError> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Mean cross-entropy over a batch.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[usize]) -> Result<f64, FallDetError> {
        self.check_batch(inputs, targets)?;
        let mut total = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            total += cross_entropy(&self.logits(x)?, t);
        }
        Ok(total / inputs.len() as f64)
    }

    fn check_batch(&self, inputs: &[Vec<f64>], targets: &[usize]) -> Result<(), FallDetError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(FallDetError::ShapeMismatch(format!(
                "{} inputs for {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= self.output_size()) {
            return Err(FallDetError::ShapeMismatch(format!(
                "target class {t} but only {} outputs",
                self.output_size()
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy and its gradient, laid out like the layers.
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[usize],
    ) -> Result<(f64, Vec<DenseLayer>), FallDetError> {
        self.check_batch(inputs, targets)?;
        for x in inputs {
            self.check_input(x)?;
        }
        let mut grads: Vec<DenseLayer> = self.layers.iter().map(|l| DenseLayer::zeros(l.rows, l.cols)).collect();
        let n = inputs.len() as f64;
        let last = self.layers.len() - 1;
        let mut total = 0.0;
        // activations[k] feeds layer k; pre[k] is layer k's output before ReLU
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (x, &target) in inputs.iter().zip(targets) {
            activations.clear();
            pre.clear();
            activations.push(x.clone());
            for (i, l) in self.layers.iter().enumerate() {
                let mut z = Vec::new();
                l.apply(&activations[i], &mut z);
                if i < last {
                    activations.push(z.iter().map(|v| v.max(0.0)).collect());
                }
                pre.push(z);
            }
            total += cross_entropy(&pre[last], target);

            let mut delta = softmax(&pre[last]);
            delta[target] -= 1.0;
            for i in (0..=last).rev() {
                let layer = &self.layers[i];
                let g = &mut grads[i];
                let a = &activations[i];
                for (r, d) in delta.iter().enumerate() {
                    let d = d / n;
                    g.bias[r] += d;
                    for (gw, av) in g.weights[r * layer.cols..(r + 1) * layer.cols].iter_mut().zip(a) {
                        *gw += d * av;
                    }
                }
                if i > 0 {
                    let z_prev = &pre[i - 1];
                    let mut back = vec![0.0; layer.cols];
                    for (r, d) in delta.iter().enumerate() {
                        let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                        for (b, w) in back.iter_mut().zip(row) {
                            *b += w * d;
                        }
                    }
                    for (b, z) in back.iter_mut().zip(z_prev) {
                        if *z <= 0.0 {
                            *b = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        Ok((total / n, grads))
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_parameters(&mut self, params: &[f64]) -> Result<(), FallDetError> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if params.len() != total {
            return Err(FallDetError::ShapeMismatch(format!(
                "{} parameters given, network has {total}",
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    fn step(&mut self, grads: &[DenseLayer], lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weights.iter_mut().zip(&g.weights).for_each(|(w, d)| *w -= lr * d);
            l.bias.iter_mut().zip(&g.bias).for_each(|(b, d)| *b -= lr * d);
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WeightsFile {
            sizes: self.sizes(),
            layers: self.layers.clone(),
        })
        .expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, FallDetError> {
        let file: WeightsFile = serde_json::from_str(text).map_err(|e| FallDetError::Parse {
            line: e.line(),
            message: format!("column {}: {e}", e.column()),
        })?;
        let net = Self::from_layers(file.layers)?;
        if net.sizes() != file.sizes {
            return Err(FallDetError::ShapeMismatch(format!(
                "header declares sizes {:?} but layers have {:?}",
                file.sizes,
                net.sizes()
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FallDetError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FallDetError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// How keypoints become network inputs: coordinates divided by the frame
/// size, keypoints under the score threshold zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub frame_width: f64,
    pub frame_height: f64,
    pub keypoint_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_width: 640.0,
            frame_height: 480.0,
            keypoint_threshold: DEFAULT_KEYPOINT_THRESHOLD,
        }
    }
}

pub fn features(d: &PoseDetection, cfg: &FeatureConfig) -> Vec<f64> {
    d.keypoints()
        .iter()
        .flat_map(|k| {
            if k.score >= cfg.keypoint_threshold {
                [k.x / cfg.frame_width, k.y / cfg.frame_height]
            } else {
                [0.0, 0.0]
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FallProbabilities {
    pub fall: f64,
    pub not_fall: f64,
}

/// Runs the fall classifier on one detection.
pub fn mlp_forward(net: &Mlp, d: &PoseDetection, cfg: &FeatureConfig) -> Result<FallProbabilities, FallDetError> {
    if net.input_size() != 2 * KEYPOINT_COUNT || net.output_size() != 2 {
        return Err(FallDetError::ShapeMismatch(format!(
            "fall classifier needs {} inputs and 2 outputs, network is {:?}",
            2 * KEYPOINT_COUNT,
            net.sizes()
        )));
    }
    let p = net.forward(&features(d, cfg))?;
    Ok(FallProbabilities {
        fall: p[FALL_CLASS],
        not_fall: p[NOT_FALL_CLASS],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Training-set loss after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Trains a fresh network of shape `sizes` on feature vectors.
pub fn train_features(
    sizes: &[usize],
    inputs: &[Vec<f64>],
    targets: &[usize],
    config: &TrainConfig,
) -> Result<(Mlp, TrainReport), FallDetError> {
    let mut net = Mlp::glorot(sizes, config.seed)?;
    net.check_batch(inputs, targets)?;
    for class in 0..net.output_size() {
        if !targets.contains(&class) {
            return Err(FallDetError::EmptyClass(class));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let batch = if config.batch_size == 0 {
        inputs.len()
    } else {
        config.batch_size.min(inputs.len())
    };
    let mut history = Vec::with_capacity(config.epochs);
    let mut bx = Vec::with_capacity(batch);
    let mut bt = Vec::with_capacity(batch);
    for epoch in 0..config.epochs {
        if batch < inputs.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            bx.clear();
            bt.clear();
            for &i in chunk {
                bx.push(inputs[i].clone());
                bt.push(targets[i]);
            }
            let (loss, grads) = net.loss_and_gradient(&bx, &bt)?;
            if !loss.is_finite() {
                return Err(FallDetError::NonfiniteLoss { epoch });
            }
            net.step(&grads, config.learning_rate);
        }
        let loss = net.loss(inputs, targets)?;
        if !loss.is_finite() || net.flat_parameters().iter().any(|v| !v.is_finite()) {
            return Err(FallDetError::NonfiniteLoss { epoch });
        }
        history.push(loss);
    }
    let final_loss = match history.last() {
        Some(&l) => l,
        None => net.loss(inputs, targets)?,
    };
    let accuracy = accuracy(&net, inputs, targets)?;
    Ok((
        net,
        TrainReport {
            loss_history: history,
            final_loss,
            accuracy,
        },
    ))
}

/// Fraction of inputs whose most probable class matches the target.
pub fn accuracy(net: &Mlp, inputs: &[Vec<f64>], targets: &[usize]) -> Result<f64, FallDetError> {
    let mut hits = 0usize;
    for (x, &t) in inputs.iter().zip(targets) {
        let z = net.logits(x)?;
        let best = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        hits += usize::from(best == t);
    }
    Ok(hits as f64 / inputs.len().max(1) as f64)
}

/// Trains the 34-20-20-2 fall classifier on labelled detections (`true` = fallen).
pub fn mlp_train(
    dataset: &[(PoseDetection, bool)],
    features_cfg: &FeatureConfig,
    config: &TrainConfig,
) -> Result<(Mlp, TrainReport), FallDetError> {
    if !dataset.iter().any(|(_, f)| *f) {
        return Err(FallDetError::EmptyClass(FALL_CLASS));
    }
    if !dataset.iter().any(|(_, f)| !*f) {
        return Err(FallDetError::EmptyClass(NOT_FALL_CLASS));
    }
    let inputs: Vec<Vec<f64>> = dataset.iter().map(|(d, _)| features(d, features_cfg)).collect();
    let targets: Vec<usize> = dataset
        .iter()
        .map(|(_, f)| if *f { FALL_CLASS } else { NOT_FALL_CLASS })
        .collect();
    train_features(&FALL_CLASSIFIER_SIZES, &inputs, &targets, config)
}
