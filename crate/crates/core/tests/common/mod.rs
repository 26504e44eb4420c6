//! Reference implementations used as oracles by the integration tests. They
//! are written for clarity, not speed, and share no code with the library
//! beyond the model's parameter layout.

#![allow(dead_code, clippy::needless_range_loop)]

use std::sync::OnceLock;

use jsma::data::LabeledDataset;
use jsma::fixture;
use jsma::nn::{Activation, ClassJacobian, ClassLabel, DenseLayer, Network, OutputLayer};
use jsma::trainer::{self, DistillConfig, TrainConfig};
use rand::Rng;

/// Random MLP with `n` inputs, the given hidden widths and `c` classes.
/// Biases are random too, so ReLU kinks land inside the unit cube.
pub fn random_mlp<R: Rng>(rng: &mut R, n: usize, hidden: &[usize], c: usize) -> Network {
    let mut layers = Vec::new();
    let mut fan_in = n;
    let widths: Vec<(usize, Activation)> = hidden
        .iter()
        .map(|&h| (h, Activation::Relu))
        .chain(std::iter::once((c, Activation::Identity)))
        .collect();
    for (width, act) in widths {
        let weights = (0..fan_in * width)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let bias = (0..width).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layers.push(DenseLayer::new(fan_in, width, act, weights, bias).unwrap());
        fan_in = width;
    }
    Network::new(layers).unwrap()
}

pub fn affine_model(n: usize, c: usize, weights: Vec<f64>, bias: Vec<f64>) -> Network {
    Network::new(vec![DenseLayer::new(
        n,
        c,
        Activation::Identity,
        weights,
        bias,
    )
    .unwrap()])
    .unwrap()
}

pub fn random_input<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Forward pass written out with explicit loops.
pub fn naive_logits(model: &Network, x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    for layer in model.layers() {
        let mut out = vec![0.0; layer.out_dim];
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for c in 0..layer.in_dim {
                s += layer.weights[r * layer.in_dim + c] * act[c];
            }
            s += layer.bias[r];
            *o = match layer.activation {
                Activation::Relu => {
                    if s > 0.0 {
                        s
                    } else {
                        0.0
                    }
                }
                Activation::Identity => s,
            };
        }
        act = out;
    }
    act
}

pub fn naive_softmax(z: &[f64], t: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| ((v - m) / t).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Central finite differences of `Z` or `softmax(Z)` (T = 1), row per class.
pub fn fd_jacobian(model: &Network, x: &[f64], layer: OutputLayer, h: f64) -> Vec<Vec<f64>> {
    let out = |x: &[f64]| {
        let z = naive_logits(model, x);
        match layer {
            OutputLayer::Logit => z,
            OutputLayer::Softmax => naive_softmax(&z, 1.0),
        }
    };
    let c = model.class_count();
    let mut jac = vec![vec![0.0; x.len()]; c];
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        let mut minus = x.to_vec();
        plus[i] += h;
        minus[i] -= h;
        let (fp, fm) = (out(&plus), out(&minus));
        for k in 0..c {
            jac[k][i] = (fp[k] - fm[k]) / (2.0 * h);
        }
    }
    jac
}

/// Whether any hidden ReLU pre-activation lies within `margin` of zero, in
/// which case finite differences straddle a kink.
pub fn near_kink(model: &Network, x: &[f64], margin: f64) -> bool {
    let mut act = x.to_vec();
    for layer in model.layers() {
        let pre = layer.affine(&act);
        if layer.activation == Activation::Relu && pre.iter().any(|p| p.abs() < margin) {
            return true;
        }
        act = layer.activate(&pre);
    }
    false
}

/// `alpha_k = J[t][k]`, `beta_k = sum over c != t of J[c][k]` (ascending c).
pub fn oracle_terms(jac: &[Vec<f64>], t: usize) -> (Vec<f64>, Vec<f64>) {
    let n = jac[0].len();
    let alpha = jac[t].clone();
    let beta = (0..n)
        .map(|k| {
            let mut b = 0.0;
            for (c, row) in jac.iter().enumerate() {
                if c != t {
                    b += row[k];
                }
            }
            b
        })
        .collect();
    (alpha, beta)
}

pub fn jac_rows(jac: &ClassJacobian) -> Vec<Vec<f64>> {
    (0..jac.classes()).map(|c| jac.row(c).to_vec()).collect()
}

/// Exhaustive result: `(t, p, q, direction, score)`.
pub type Triple = (usize, usize, usize, f64, f64);

/// Every pair of `domain` (ascending, `p < q`) under the S+ (`positive`) or
/// S- sign test for class `t`; first strict maximum wins.
pub fn brute_constrained(
    jac: &[Vec<f64>],
    domain: &[usize],
    t: usize,
    positive: bool,
    direction: f64,
) -> Option<Triple> {
    let (alpha, beta) = oracle_terms(jac, t);
    let mut best = None;
    let mut gamma = 0.0;
    for (i, &p) in domain.iter().enumerate() {
        for &q in &domain[i + 1..] {
            let a = alpha[p] + alpha[q];
            let b = beta[p] + beta[q];
            let ok = if positive {
                a > 0.0 && b < 0.0
            } else {
                a < 0.0 && b > 0.0
            };
            if ok && -a * b > gamma {
                gamma = -a * b;
                best = Some((t, p, q, direction, gamma));
            }
        }
    }
    best
}

/// Every `(t, p, q)` with no sign test. Direction follows the true-class rule.
pub fn brute_maximal(jac: &[Vec<f64>], domain: &[usize], y: usize, theta: f64) -> Option<Triple> {
    let mut best = None;
    let mut gamma = 0.0;
    for t in 0..jac.len() {
        let (alpha, beta) = oracle_terms(jac, t);
        for (i, &p) in domain.iter().enumerate() {
            for &q in &domain[i + 1..] {
                let a = alpha[p] + alpha[q];
                let b = beta[p] + beta[q];
                if -a * b > gamma {
                    gamma = -a * b;
                    let sign = if a >= 0.0 { 1.0 } else { -1.0 };
                    let dir = if t == y { -sign * theta } else { sign * theta };
                    best = Some((t, p, q, dir, gamma));
                }
            }
        }
    }
    best
}

/// One recorded iteration of the literal transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct LiteralStep {
    pub t: usize,
    pub p: usize,
    pub q: usize,
    pub theta: f64,
    pub gamma: f64,
    pub domain_after: Vec<usize>,
}

/// Step-by-step transcription of the maximal attack as listed: loop while
/// `argmax Z(x') == y`, `|Gamma| >= 2` and `i < i_max`; score every pixel pair
/// in Gamma against every class; apply the clipped step to both pixels; drop
/// pixels that leave (0, 1) or whose step reverses their previous direction.
pub fn literal_maximal(
    model: &Network,
    x: &[f64],
    y: usize,
    layer: OutputLayer,
    theta: f64,
    epsilon: f64,
    i_max: usize,
) -> (Vec<f64>, Vec<LiteralStep>) {
    let n = x.len();
    let mut xp = x.to_vec();
    let mut gamma_set: Vec<usize> = (0..n).collect();
    let mut eta = vec![0.0; n];
    let mut steps = Vec::new();
    let argmax = |z: &[f64]| {
        let mut b = 0;
        for k in 1..z.len() {
            if z[k] > z[b] {
                b = k;
            }
        }
        b
    };
    let mut i = 0;
    while argmax(&naive_logits(model, &xp)) == y && gamma_set.len() >= 2 && i < i_max {
        let jac = jac_rows(&model.input_jacobian(&xp, layer, 1.0).unwrap());
        let mut best_score = 0.0;
        let mut best: Option<(usize, usize, usize, f64)> = None;
        for t in 0..model.class_count() {
            let (alpha, beta) = oracle_terms(&jac, t);
            for a_idx in 0..gamma_set.len() {
                for b_idx in a_idx + 1..gamma_set.len() {
                    let (p, q) = (gamma_set[a_idx], gamma_set[b_idx]);
                    let al = alpha[p] + alpha[q];
                    let be = beta[p] + beta[q];
                    if -al * be > best_score {
                        best_score = -al * be;
                        best = Some((t, p, q, al));
                    }
                }
            }
        }
        let Some((t, p, q, al)) = best else { break };
        let sgn = if al >= 0.0 { 1.0 } else { -1.0 };
        let th = if t == y { -sgn * theta } else { sgn * theta };
        for k in [p, q] {
            let stepped = xp[k] + th;
            xp[k] = f64::min(
                1.0,
                f64::min(
                    x[k] + epsilon,
                    f64::max(0.0, f64::max(x[k] - epsilon, stepped)),
                ),
            );
            if xp[k] <= 0.0 || xp[k] >= 1.0 || eta[k] == -th {
                gamma_set.retain(|&g| g != k);
            }
            eta[k] = th;
        }
        steps.push(LiteralStep {
            t,
            p,
            q,
            theta: th,
            gamma: best_score,
            domain_after: gamma_set.clone(),
        });
        i += 1;
    }
    (xp, steps)
}

/// Test-scale training settings shared by the fixture-based tests.
pub fn fixture_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.05,
        seed: 1,
        hidden_dims: vec![64],
    }
}

pub fn fixture_data() -> &'static (LabeledDataset, LabeledDataset) {
    static DATA: OnceLock<(LabeledDataset, LabeledDataset)> = OnceLock::new();
    DATA.get_or_init(fixture::mini_digits)
}

/// Classifier trained on the fixture with [`fixture_config`], built once per
/// test binary.
pub fn fixture_model() -> &'static Network {
    static MODEL: OnceLock<Network> = OnceLock::new();
    MODEL.get_or_init(|| {
        let (train, _) = fixture_data();
        trainer::train(train, &fixture_config()).unwrap().model
    })
}

/// Defensively distilled student at temperature `t`. The learning rate is
/// scaled by `t` because softmax gradients at temperature `t` shrink by `1/t`.
pub fn distilled_student(t: f64) -> Network {
    let (train, _) = fixture_data();
    let config = DistillConfig {
        temperature: t,
        train: TrainConfig {
            epochs: 60,
            learning_rate: 0.05 * t,
            ..fixture_config()
        },
    };
    trainer::defensive_distillation(train, None, &config)
        .unwrap()
        .1
        .model
}

pub fn label(k: usize) -> ClassLabel {
    ClassLabel(k)
}
