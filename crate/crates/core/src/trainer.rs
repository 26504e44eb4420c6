//! Mini-batch SGD with softmax cross-entropy, and distillation onto
//! temperature-softened teacher outputs.
//!
//! Training at temperature `T` means the loss is computed on
//! `softmax(Z(x) / T)`. The returned model is always used at `T = 1`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{softmax, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 1,
            hidden_dims: vec![64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParameter(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temperature: f64,
    pub train: TrainConfig,
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 1.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "distillation temperature must be >= 1, got {}",
                self.temperature
            )));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the training set after the epoch, at the
    /// training temperature.
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Network,
    pub history: Vec<EpochStats>,
}

impl TrainOutcome {
    /// Training log as CSV: `epoch,loss,train_acc,test_acc`.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc,test_acc\n");
        for e in &self.history {
            let test = e.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.loss, e.train_accuracy, test
            ));
        }
        out
    }
}

/// Configurable SGD trainer. Single-threaded, so a fixed seed reproduces the
/// model bit for bit.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainConfig,
    temperature: f64,
    eval: Option<&'a LabeledDataset>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Self {
        Trainer {
            config,
            temperature: 1.0,
            eval: None,
        }
    }

    /// Held-out set scored after every epoch.
    pub fn with_eval(mut self, eval: &'a LabeledDataset) -> Self {
        self.eval = Some(eval);
        self
    }

    /// Temperature of the training softmax (default 1).
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Trains a fresh model on one-hot labels.
    pub fn train(&self, dataset: &LabeledDataset) -> Result<TrainOutcome> {
        let c = dataset.class_count();
        let targets = dataset
            .samples()
            .iter()
            .map(|(_, y)| {
                let mut t = vec![0.0; c];
                t[y.index()] = 1.0;
                t
            })
            .collect();
        self.fit(dataset, targets)
    }

    /// Trains a fresh student on the teacher's soft labels
    /// `softmax(Z_teacher(x) / T)`, with the student's own softmax also at `T`.
    pub fn distill(&self, teacher: &Network, dataset: &LabeledDataset) -> Result<TrainOutcome> {
        if teacher.class_count() != dataset.class_count() {
            return Err(Error::InvalidParameter(format!(
                "teacher has {} classes, dataset has {}",
                teacher.class_count(),
                dataset.class_count()
            )));
        }
        let targets = soft_targets(teacher, dataset, self.temperature)?;
        self.fit(dataset, targets)
    }

    fn fit(&self, dataset: &LabeledDataset, targets: Vec<Vec<f64>>) -> Result<TrainOutcome> {
        self.config.validate()?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let n = dataset.feature_count().ok_or(Error::EmptyDataset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut model =
            Network::glorot(n, &self.config.hidden_dims, dataset.class_count(), &mut rng)?;
        let mut grads = Gradients::zeros_like(&model);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut history = Vec::with_capacity(self.config.epochs);

        for epoch in 1..=self.config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.config.batch_size) {
                grads.clear();
                for &k in batch {
                    let (x, _) = &dataset.samples()[k];
                    grads.accumulate(&model, x, &targets[k], self.temperature);
                }
                grads.apply(&mut model, self.config.learning_rate / batch.len() as f64);
            }

            let loss = mean_cross_entropy(&model, dataset, &targets, self.temperature);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch, loss });
            }
            history.push(EpochStats {
                epoch,
                loss,
                train_accuracy: accuracy(&model, dataset),
                test_accuracy: self.eval.map(|d| accuracy(&model, d)),
            });
        }
        Ok(TrainOutcome { model, history })
    }
}

/// Trains a classifier on one-hot labels at temperature 1.
pub fn train(dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(config.clone()).train(dataset)
}

/// Distills `teacher` into a fresh student at `config.temperature`.
pub fn distill(
    teacher: &Network,
    dataset: &LabeledDataset,
    config: &DistillConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    Trainer::new(config.train.clone())
        .with_temperature(config.temperature)
        .distill(teacher, dataset)
}

/// Full defensive distillation: a teacher trained on hard labels at `T`, then
/// a student distilled from it at the same `T`. Returns `(teacher, student)`.
pub fn defensive_distillation(
    dataset: &LabeledDataset,
    eval: Option<&LabeledDataset>,
    config: &DistillConfig,
) -> Result<(TrainOutcome, TrainOutcome)> {
    config.validate()?;
    let mut trainer = Trainer::new(config.train.clone()).with_temperature(config.temperature);
    if let Some(eval) = eval {
        trainer = trainer.with_eval(eval);
    }
    let teacher = trainer.train(dataset)?;
    let student = trainer.distill(&teacher.model, dataset)?;
    Ok((teacher, student))
}

/// `softmax(Z_teacher(x) / T)` for every sample.
pub fn soft_targets(
    teacher: &Network,
    dataset: &LabeledDataset,
    temperature: f64,
) -> Result<Vec<Vec<f64>>> {
    dataset
        .samples()
        .iter()
        .map(|(x, _)| teacher.probabilities(x, temperature))
        .collect()
}

/// Fraction of samples whose prediction matches the label.
pub fn accuracy(model: &Network, dataset: &LabeledDataset) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let correct = dataset
        .samples()
        .iter()
        .filter(|(x, y)| model.predict(x).map(|p| p == *y).unwrap_or(false))
        .count();
    correct as f64 / dataset.len() as f64
}

fn log_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = z.iter().map(|&v| (v - max) / temperature).collect();
    let log_total = scaled.iter().map(|v| v.exp()).sum::<f64>().ln();
    scaled.into_iter().map(|v| v - log_total).collect()
}

fn mean_cross_entropy(
    model: &Network,
    dataset: &LabeledDataset,
    targets: &[Vec<f64>],
    temperature: f64,
) -> f64 {
    let total: f64 = dataset
        .samples()
        .iter()
        .zip(targets)
        .map(|((x, _), t)| {
            let z = model.forward_logits(x).expect("dataset matches model");
            let logp = log_softmax(&z, temperature);
            -t.iter()
                .zip(&logp)
                .filter(|(&q, _)| q > 0.0)
                .map(|(q, lp)| q * lp)
                .sum::<f64>()
        })
        .sum();
    total / dataset.len() as f64
}

struct Gradients {
    weights: Vec<Vec<f64>>,
    bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &Network) -> Self {
        Gradients {
            weights: model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            bias: model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.bias.len()])
                .collect(),
        }
    }

    fn clear(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.bias.iter_mut())
            .for_each(|g| g.fill(0.0));
    }

    /// Adds the gradient of `CE(target, softmax(Z(x)/T))` for one sample.
    fn accumulate(&mut self, model: &Network, x: &[f64], target: &[f64], temperature: f64) {
        let layers = model.layers();
        let pres = model.forward_pre_activations(x);
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        inputs.push(x.to_vec());
        for (layer, pre) in layers.iter().zip(&pres).take(layers.len() - 1) {
            inputs.push(layer.activate(pre));
        }

        let probs =
            softmax(pres.last().expect("non-empty"), temperature).expect("temperature validated");
        let mut delta: Vec<f64> = probs
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) / temperature)
            .collect();

        for k in (0..layers.len()).rev() {
            let layer = &layers[k];
            let input = &inputs[k];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                self.bias[k][j] += d;
                let row = &mut self.weights[k][j * layer.in_dim..(j + 1) * layer.in_dim];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if k == 0 {
                break;
            }
            let below = &layers[k - 1];
            let mut next = vec![0.0; layer.in_dim];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, &p) in next.iter_mut().zip(&pres[k - 1]) {
                *n *= below.activation_slope(p);
            }
            delta = next;
        }
    }

    fn apply(&self, model: &mut Network, step: f64) {
        for (k, layer) in model.layers_mut().iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&self.weights[k]) {
                *w -= step * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(&self.bias[k]) {
                *b -= step * g;
            }
        }
    }
}
