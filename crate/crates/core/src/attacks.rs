//! Saliency-map attack loops.
//!
//! All families share one loop: compute the input Jacobian at `x'`, pick a
//! feature pair, step both features by `theta'` through [`clip_step`], prune
//! the search domain, repeat until the goal is met, the iteration budget is
//! spent, fewer than two features remain, or no pair has positive saliency.
//!
//! | family              | class used    | map | step      | goal          |
//! |---------------------|---------------|-----|-----------|---------------|
//! | `Targeted(+)`       | target `t`    | S+  | `+theta`  | `y'(x') == t` |
//! | `Targeted(-)`       | target `t`    | S-  | `-theta`  | `y'(x') == t` |
//! | `NonTargeted(+)`    | true `y`      | S-  | `+theta`  | `y'(x') != y` |
//! | `NonTargeted(-)`    | true `y`      | S+  | `-theta`  | `y'(x') != y` |
//! | `Maximal`           | every class   | -   | from `A`  | `y'(x') != y` |
//!
//! Domain pruning: a stepped feature leaves the domain when its value is no
//! longer inside `(0, 1)`, when the clip bound was active on the step, or when
//! the step reverses its last recorded direction. A reversing step is not
//! applied; the feature is only removed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ClassLabel, FeatureVector, Network, OutputLayer};
use crate::saliency::{
    all_feature_terms, best_pair_constrained, best_pair_maximal, feature_terms, PairChoice,
    SaliencyMap, SearchDomain,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    fn symbol(self) -> char {
        match self {
            Direction::Increase => '+',
            Direction::Decrease => '-',
        }
    }

    fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackFamily {
    Targeted(Direction),
    NonTargeted(Direction),
    Maximal,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 5] = [
        AttackFamily::Targeted(Direction::Increase),
        AttackFamily::Targeted(Direction::Decrease),
        AttackFamily::NonTargeted(Direction::Increase),
        AttackFamily::NonTargeted(Direction::Decrease),
        AttackFamily::Maximal,
    ];

    pub fn is_targeted(self) -> bool {
        matches!(self, AttackFamily::Targeted(_))
    }
}

impl FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use AttackFamily::*;
        use Direction::*;
        match s.trim().to_ascii_lowercase().as_str() {
            "+jsma" | "jsma+" => Ok(Targeted(Increase)),
            "-jsma" | "jsma-" => Ok(Targeted(Decrease)),
            "+nt" | "nt+" | "+nt-jsma" | "nt-jsma+" => Ok(NonTargeted(Increase)),
            "-nt" | "nt-" | "-nt-jsma" | "nt-jsma-" => Ok(NonTargeted(Decrease)),
            "maximal" | "m" | "m-jsma" | "mjsma" => Ok(Maximal),
            other => Err(Error::InvalidParameter(format!(
                "unknown attack family {other:?} (expected +jsma, -jsma, +nt, -nt or maximal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub family: AttackFamily,
    pub layer: OutputLayer,
    /// Step magnitude in `(0, 1]`.
    pub theta: f64,
    /// L-infinity bound in `(0, 1]`.
    pub epsilon: f64,
    /// `None` means unbounded.
    pub max_iters: Option<usize>,
}

impl AttackConfig {
    pub fn new(family: AttackFamily, layer: OutputLayer) -> Self {
        AttackConfig {
            family,
            layer,
            theta: 1.0,
            epsilon: 1.0,
            max_iters: None,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: Option<usize>) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "theta must be in (0, 1], got {}",
                self.theta
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Conventional name, e.g. `JSMA+F`, `NT-JSMA-Z`, `M-JSMA_F`.
    pub fn name(&self) -> String {
        let layer = self.layer.symbol();
        match self.family {
            AttackFamily::Targeted(d) => format!("JSMA{}{layer}", d.symbol()),
            AttackFamily::NonTargeted(d) => format!("NT-JSMA{}{layer}", d.symbol()),
            AttackFamily::Maximal => format!("M-JSMA_{layer}"),
        }
    }
}

impl fmt::Display for AttackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Why the loop stopped. The declaration order is used to rank failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StopReason {
    Misclassified,
    MaxIters,
    DomainExhausted,
    NoSalientPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelUpdate {
    pub index: usize,
    pub before: f64,
    pub after: f64,
    /// `false` when the step was blocked because it reversed the feature's
    /// previous direction.
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub choice: PairChoice,
    pub updates: [PixelUpdate; 2],
    /// Indices pruned from the domain on this step.
    pub removed: Vec<usize>,
    pub domain_size: usize,
    /// Prediction for `x'` after the step, and its softmax confidence.
    pub predicted: ClassLabel,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub adversary: FeatureVector,
    pub success: bool,
    pub iterations: usize,
    pub predicted: ClassLabel,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceStep>,
}

impl AttackOutcome {
    /// One line per iteration: `i,t,p,q,gamma,theta,predicted,confidence`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("i,t,p,q,gamma,theta,predicted,confidence\n");
        for s in &self.trace {
            out.push_str(&format!(
                "{},{},{},{},{:e},{},{},{}\n",
                s.iteration,
                s.choice.class,
                s.choice.pair.p,
                s.choice.pair.q,
                s.choice.score,
                s.choice.direction,
                s.predicted,
                s.confidence
            ));
        }
        out
    }
}

/// Mutable state of one attack run: `x'`, the domain, the direction history
/// and the iteration counter.
#[derive(Debug, Clone)]
pub struct SearchState {
    pub x_prime: Vec<f64>,
    pub domain: SearchDomain,
    /// Last step applied to each feature: `0`, `+theta` or `-theta`.
    pub history: Vec<f64>,
    pub iter: usize,
}

impl SearchState {
    pub fn new(x: &FeatureVector) -> Self {
        SearchState {
            x_prime: x.values().to_vec(),
            domain: SearchDomain::full(x.len()),
            history: vec![0.0; x.len()],
            iter: 0,
        }
    }
}

/// `min{1, x + eps, max{0, x - eps, x'}}`.
#[inline]
pub fn clip_step(original: f64, candidate: f64, epsilon: f64) -> f64 {
    let floor = 0.0f64.max(original - epsilon).max(candidate);
    1.0f64.min(original + epsilon).min(floor)
}

#[derive(Debug, Clone, Copy)]
enum Goal {
    Reach(ClassLabel),
    Escape(ClassLabel),
}

impl Goal {
    fn met(self, predicted: ClassLabel) -> bool {
        match self {
            Goal::Reach(t) => predicted == t,
            Goal::Escape(y) => predicted != y,
        }
    }
}

fn check_class(model: &Network, class: ClassLabel) -> Result<()> {
    if class.index() >= model.class_count() {
        return Err(Error::InvalidParameter(format!(
            "class {class} out of range for {} classes",
            model.class_count()
        )));
    }
    Ok(())
}

fn run_loop<F>(
    model: &Network,
    x: &FeatureVector,
    cfg: &AttackConfig,
    goal: Goal,
    mut choose: F,
) -> Result<AttackOutcome>
where
    F: FnMut(&Network, &SearchState) -> Result<Option<PairChoice>>,
{
    cfg.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: x.len(),
        });
    }

    let mut state = SearchState::new(x);
    let mut predicted = model.predict(&state.x_prime)?;
    let mut trace = Vec::new();

    let stop_reason = loop {
        if goal.met(predicted) {
            break StopReason::Misclassified;
        }
        if cfg.max_iters.is_some_and(|m| state.iter >= m) {
            break StopReason::MaxIters;
        }
        if state.domain.len() < 2 {
            break StopReason::DomainExhausted;
        }
        let Some(choice) = choose(model, &state)? else {
            break StopReason::NoSalientPair;
        };

        let step = choice.direction;
        let mut removed = Vec::new();
        let updates = [choice.pair.p, choice.pair.q].map(|k| {
            let before = state.x_prime[k];
            if state.history[k] == -step {
                state.domain.remove(k);
                removed.push(k);
                return PixelUpdate {
                    index: k,
                    before,
                    after: before,
                    applied: false,
                };
            }
            let candidate = before + step;
            let after = clip_step(x[k], candidate, cfg.epsilon);
            state.x_prime[k] = after;
            if !(after > 0.0 && after < 1.0) || after != candidate {
                state.domain.remove(k);
                removed.push(k);
            }
            PixelUpdate {
                index: k,
                before,
                after,
                applied: true,
            }
        });
        state.history[choice.pair.p] = step;
        state.history[choice.pair.q] = step;

        let probs = model.probabilities(&state.x_prime, 1.0)?;
        predicted = crate::nn::argmax(&model.forward_logits(&state.x_prime)?);
        trace.push(TraceStep {
            iteration: state.iter,
            choice,
            updates,
            removed,
            domain_size: state.domain.len(),
            predicted,
            confidence: probs[predicted.index()],
        });
        state.iter += 1;
    };

    Ok(AttackOutcome {
        adversary: FeatureVector::new(state.x_prime)?,
        success: stop_reason == StopReason::Misclassified,
        iterations: state.iter,
        predicted,
        stop_reason,
        trace,
    })
}

/// Targeted JSMA: drive the prediction to `target`.
pub fn run_targeted(
    model: &Network,
    x: &FeatureVector,
    target: ClassLabel,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let AttackFamily::Targeted(direction) = cfg.family else {
        return Err(Error::InvalidParameter(format!(
            "{} is not a targeted attack",
            cfg.name()
        )));
    };
    check_class(model, target)?;
    let map = match direction {
        Direction::Increase => SaliencyMap::Positive,
        Direction::Decrease => SaliencyMap::Negative,
    };
    let step = direction.sign() * cfg.theta;
    run_loop(model, x, cfg, Goal::Reach(target), |model, state| {
        let jac = model.input_jacobian(&state.x_prime, cfg.layer, 1.0)?;
        let terms = feature_terms(&jac, target)?;
        best_pair_constrained(&terms, &state.domain, map, step)
    })
}

/// Non-targeted JSMA: push the prediction away from the true class `y`,
/// using the swapped saliency map on `y`'s terms.
pub fn run_non_targeted(
    model: &Network,
    x: &FeatureVector,
    true_class: ClassLabel,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let AttackFamily::NonTargeted(direction) = cfg.family else {
        return Err(Error::InvalidParameter(format!(
            "{} is not a non-targeted attack",
            cfg.name()
        )));
    };
    check_class(model, true_class)?;
    let map = match direction {
        Direction::Increase => SaliencyMap::Negative,
        Direction::Decrease => SaliencyMap::Positive,
    };
    let step = direction.sign() * cfg.theta;
    run_loop(model, x, cfg, Goal::Escape(true_class), |model, state| {
        let jac = model.input_jacobian(&state.x_prime, cfg.layer, 1.0)?;
        let terms = feature_terms(&jac, true_class)?;
        best_pair_constrained(&terms, &state.domain, map, step)
    })
}

/// Maximal JSMA: sweep every class, choose the direction per step, and never
/// step a feature back against its previous direction.
pub fn run_maximal(
    model: &Network,
    x: &FeatureVector,
    true_class: ClassLabel,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    if cfg.family != AttackFamily::Maximal {
        return Err(Error::InvalidParameter(format!(
            "{} is not a maximal attack",
            cfg.name()
        )));
    }
    check_class(model, true_class)?;
    run_loop(model, x, cfg, Goal::Escape(true_class), |model, state| {
        let jac = model.input_jacobian(&state.x_prime, cfg.layer, 1.0)?;
        let terms = all_feature_terms(&jac);
        best_pair_maximal(&terms, &state.domain, true_class, cfg.theta)
    })
}

/// Dispatches on `cfg.family`. `class` is the target for targeted families
/// and the true class otherwise.
pub fn run_attack(
    model: &Network,
    x: &FeatureVector,
    class: ClassLabel,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    match cfg.family {
        AttackFamily::Targeted(_) => run_targeted(model, x, class, cfg),
        AttackFamily::NonTargeted(_) => run_non_targeted(model, x, class, cfg),
        AttackFamily::Maximal => run_maximal(model, x, class, cfg),
    }
}
