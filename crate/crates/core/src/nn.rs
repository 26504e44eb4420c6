//! Dense feedforward classifier: logits, temperature softmax, predictions and
//! exact per-class input Jacobians at the logit (Z) or softmax (F) layer.
//!
//! Everything is `f64`. A [`Network`] is immutable once built, so it can be
//! shared between attack workers without locking.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A unit-normalized input image, flattened to `n >= 2` features in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a feature vector needs at least 2 features, got {}",
                values.len()
            )));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::FeatureOutOfRange { index, value });
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of a class in `[0, C)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Which output a Jacobian (and therefore a saliency map) is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputLayer {
    /// Softmax probabilities `f(x)`.
    #[serde(rename = "F")]
    Softmax,
    /// Raw logits `Z(x)`.
    #[serde(rename = "Z")]
    Logit,
}

impl OutputLayer {
    pub fn symbol(self) -> &'static str {
        match self {
            OutputLayer::Softmax => "F",
            OutputLayer::Logit => "Z",
        }
    }
}

impl FromStr for OutputLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "softmax" => Ok(OutputLayer::Softmax),
            "z" | "logit" | "logits" => Ok(OutputLayer::Logit),
            other => Err(Error::InvalidParameter(format!("unknown layer {other:?}"))),
        }
    }
}

/// Affine map followed by an elementwise activation. Weights are row-major,
/// `out_dim` rows of `in_dim` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidModel(
                "layer dimensions must be positive".into(),
            ));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::InvalidModel(format!(
                "weight matrix has {} entries, expected {}x{}",
                weights.len(),
                out_dim,
                in_dim
            )));
        }
        if bias.len() != out_dim {
            return Err(Error::InvalidModel(format!(
                "bias has {} entries, expected {}",
                bias.len(),
                out_dim
            )));
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`,
    /// zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-s..=s))
            .collect();
        DenseLayer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    /// Pre-activation `W x + b`.
    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    pub fn activate(&self, pre: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Identity => pre.to_vec(),
        }
    }

    /// Derivative of the activation at `pre`. ReLU uses subgradient 0 at 0.
    #[inline]
    pub fn activation_slope(&self, pre: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Feedforward classifier. The last layer is an identity layer whose outputs
/// are the logits `Z(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let last = layers
            .last()
            .ok_or_else(|| Error::InvalidModel("network has no layers".into()))?;
        if last.activation != Activation::Identity {
            return Err(Error::InvalidModel(
                "final layer must use identity activation".into(),
            ));
        }
        if last.out_dim < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least 2 classes, got {}",
                last.out_dim
            )));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::InvalidModel(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    k,
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(Network { layers })
    }

    /// Randomly initialized MLP: ReLU hidden layers of the given widths and an
    /// identity output layer.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dims: &[usize],
        class_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::InvalidModel("layer widths must be positive".into()));
        }
        let mut layers = Vec::with_capacity(hidden_dims.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden_dims {
            layers.push(DenseLayer::glorot(fan_in, width, Activation::Relu, rng));
            fan_in = width;
        }
        layers.push(DenseLayer::glorot(
            fan_in,
            class_count,
            Activation::Identity,
            rng,
        ));
        Network::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Raw final-layer outputs `Z(x)`.
    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut act = x.to_vec();
        for layer in &self.layers {
            act = layer.activate(&layer.affine(&act));
        }
        Ok(act)
    }

    /// Pre-activations of every layer; the last entry is `Z(x)`.
    pub(crate) fn forward_pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for layer in &self.layers {
            let pre = layer.affine(&act);
            act = layer.activate(&pre);
            pres.push(pre);
        }
        pres
    }

    /// `softmax(Z(x) / T)`.
    pub fn probabilities(&self, x: &[f64], temperature: f64) -> Result<Vec<f64>> {
        softmax(&self.forward_logits(x)?, temperature)
    }

    /// Arg-max class of `f(x)`, computed on the logits; ties go to the lowest
    /// class index.
    pub fn predict(&self, x: &[f64]) -> Result<ClassLabel> {
        Ok(argmax(&self.forward_logits(x)?))
    }

    /// Exact `C x n` input Jacobian of the logits or of `softmax(Z / T)`.
    pub fn input_jacobian(
        &self,
        x: &[f64],
        layer: OutputLayer,
        temperature: f64,
    ) -> Result<ClassJacobian> {
        self.check_input(x)?;
        check_temperature(temperature)?;
        let pres = self.forward_pre_activations(x);
        let classes = self.class_count();

        // Reverse sweep for all classes at once: `grad` holds one row per class
        // of d Z_c / d(layer output), starting from the identity.
        let mut width = classes;
        let mut grad = vec![0.0; classes * classes];
        for c in 0..classes {
            grad[c * classes + c] = 1.0;
        }
        for (layer, pre) in self.layers.iter().zip(&pres).rev() {
            for row in grad.chunks_exact_mut(width) {
                for (g, &p) in row.iter_mut().zip(pre) {
                    *g *= layer.activation_slope(p);
                }
            }
            let mut next = vec![0.0; classes * layer.in_dim];
            for (row, out) in grad
                .chunks_exact(width)
                .zip(next.chunks_exact_mut(layer.in_dim))
            {
                for (j, &g) in row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (o, &w) in out.iter_mut().zip(w_row) {
                        *o += g * w;
                    }
                }
            }
            grad = next;
            width = layer.in_dim;
        }

        let n = width;
        if layer == OutputLayer::Softmax {
            // d f_c / d x_i = p_c / T * (dZ_c/dx_i - sum_k p_k dZ_k/dx_i)
            let logits = pres.last().expect("network has layers");
            let probs = softmax(logits, temperature)?;
            let mut mean = vec![0.0; n];
            for (row, &p) in grad.chunks_exact(n).zip(&probs) {
                for (m, &g) in mean.iter_mut().zip(row) {
                    *m += p * g;
                }
            }
            for (row, &p) in grad.chunks_exact_mut(n).zip(&probs) {
                for (g, &m) in row.iter_mut().zip(&mean) {
                    *g = p / temperature * (*g - m);
                }
            }
        }

        Ok(ClassJacobian {
            classes,
            features: n,
            layer,
            data: grad,
        })
    }
}

/// `C x n` matrix of `d out_c / d x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassJacobian {
    classes: usize,
    features: usize,
    layer: OutputLayer,
    data: Vec<f64>,
}

impl ClassJacobian {
    /// Builds a Jacobian from a row-major `classes x features` buffer.
    pub fn from_rows(
        classes: usize,
        features: usize,
        layer: OutputLayer,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != classes * features {
            return Err(Error::InvalidParameter(format!(
                "jacobian buffer has {} entries, expected {}x{}",
                data.len(),
                classes,
                features
            )));
        }
        Ok(ClassJacobian {
            classes,
            features,
            layer,
            data,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn layer(&self) -> OutputLayer {
        self.layer
    }

    #[inline]
    pub fn get(&self, class: usize, feature: usize) -> f64 {
        self.data[class * self.features + feature]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.data[class * self.features..(class + 1) * self.features]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column_sum(&self, feature: usize) -> f64 {
        (0..self.classes).map(|c| self.get(c, feature)).sum()
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Numerically stable `softmax(z / T)`.
pub fn softmax(z: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if z.is_empty() {
        return Ok(Vec::new());
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// First index of the maximum value.
pub fn argmax(values: &[f64]) -> ClassLabel {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    ClassLabel(best)
}
