//! Batch evaluation: success rate, mean L0, mean L2 and mean softmax entropy
//! per attack variant, over the correctly-classified samples of a dataset.
//!
//! Means are taken over successful attacks only; failures show up in the
//! success percentage. Entropy is in nats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, run_targeted, AttackConfig, AttackOutcome};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ClassLabel, FeatureVector, Network};

/// Features whose change exceeds this count towards L0.
pub const L0_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMetrics {
    pub l0: usize,
    pub l2: f64,
    pub entropy: f64,
}

/// L0 / L2 distance between `x` and `x_prime`, and the entropy of `probs`.
pub fn metrics(x: &[f64], x_prime: &[f64], probs: &[f64]) -> Result<PerturbationMetrics> {
    if x.len() != x_prime.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: x_prime.len(),
        });
    }
    let mut l0 = 0;
    let mut sq = 0.0;
    for (a, b) in x.iter().zip(x_prime) {
        let d = b - a;
        if d.abs() > L0_TOLERANCE {
            l0 += 1;
        }
        sq += d * d;
    }
    let entropy = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>();
    Ok(PerturbationMetrics {
        l0,
        l2: sq.sqrt(),
        entropy: entropy.max(0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub l0: usize,
    pub l2: f64,
    pub entropy: f64,
    pub success: bool,
    pub iterations: usize,
}

impl MetricsRecord {
    /// Scores an outcome against its clean input.
    pub fn from_outcome(
        model: &Network,
        x: &FeatureVector,
        outcome: &AttackOutcome,
    ) -> Result<Self> {
        let probs = model.probabilities(&outcome.adversary, 1.0)?;
        let m = metrics(x, &outcome.adversary, &probs)?;
        Ok(MetricsRecord {
            l0: m.l0,
            l2: m.l2,
            entropy: m.entropy,
            success: outcome.success,
            iterations: outcome.iterations,
        })
    }
}

/// Targeted attack towards every class other than `true_class`, keeping the
/// success with the fewest iterations (ties to the lower class). When every
/// target fails, the failure ranked lowest by `(stop_reason, iterations,
/// target)` is returned.
pub fn best_target_attack(
    model: &Network,
    x: &FeatureVector,
    true_class: ClassLabel,
    cfg: &AttackConfig,
) -> Result<(AttackOutcome, ClassLabel)> {
    if !cfg.family.is_targeted() {
        return Err(Error::InvalidParameter(format!(
            "{} is not a targeted attack",
            cfg.name()
        )));
    }
    let mut best: Option<(AttackOutcome, ClassLabel)> = None;
    for t in (0..model.class_count())
        .map(ClassLabel)
        .filter(|&t| t != true_class)
    {
        let outcome = run_targeted(model, x, t, cfg)?;
        let better = match &best {
            None => true,
            Some((b, _)) => {
                let key = |o: &AttackOutcome| (!o.success, o.stop_reason, o.iterations);
                key(&outcome) < key(b)
            }
        };
        if better {
            best = Some((outcome, t));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("model has a single class".into()))
}

/// Running sums for one variant. Merging is exact up to float reassociation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub attempts: usize,
    pub successes: usize,
    pub sum_l0: f64,
    pub sum_l2: f64,
    pub sum_entropy: f64,
    pub sum_iterations: f64,
}

impl Aggregate {
    pub fn push(&mut self, r: &MetricsRecord) {
        self.attempts += 1;
        if r.success {
            self.successes += 1;
            self.sum_l0 += r.l0 as f64;
            self.sum_l2 += r.l2;
            self.sum_entropy += r.entropy;
            self.sum_iterations += r.iterations as f64;
        }
    }

    pub fn merge(&mut self, other: &Aggregate) {
        self.attempts += other.attempts;
        self.successes += other.successes;
        self.sum_l0 += other.sum_l0;
        self.sum_l2 += other.sum_l2;
        self.sum_entropy += other.sum_entropy;
        self.sum_iterations += other.sum_iterations;
    }

    pub fn success_pct(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            100.0 * self.successes as f64 / self.attempts as f64
        }
    }

    fn mean(&self, sum: f64) -> Option<f64> {
        (self.successes > 0).then(|| sum / self.successes as f64)
    }

    pub fn mean_l0(&self) -> Option<f64> {
        self.mean(self.sum_l0)
    }

    pub fn mean_l2(&self) -> Option<f64> {
        self.mean(self.sum_l2)
    }

    pub fn mean_entropy(&self) -> Option<f64> {
        self.mean(self.sum_entropy)
    }

    pub fn mean_iterations(&self) -> Option<f64> {
        self.mean(self.sum_iterations)
    }
}

impl<'a> FromIterator<&'a MetricsRecord> for Aggregate {
    fn from_iter<I: IntoIterator<Item = &'a MetricsRecord>>(iter: I) -> Self {
        let mut agg = Aggregate::default();
        for r in iter {
            agg.push(r);
        }
        agg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Position in the source dataset.
    pub index: usize,
    pub true_class: ClassLabel,
    /// Chosen target for targeted families.
    pub target: Option<ClassLabel>,
    pub outcome: AttackOutcome,
    pub record: MetricsRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub config: AttackConfig,
    pub aggregate: Aggregate,
    pub samples: Vec<SampleResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub sample_count: usize,
    pub variants: Vec<VariantReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CampaignOptions {
    /// Evaluate only the first `n` correctly-classified samples.
    pub sample_limit: Option<usize>,
    /// Worker threads; `0` uses the rayon default.
    pub workers: usize,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            sample_limit: None,
            workers: 1,
        }
    }
}

/// Indices of samples the model classifies correctly, in dataset order.
pub fn correctly_classified(
    model: &Network,
    dataset: &LabeledDataset,
    limit: Option<usize>,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (k, (x, y)) in dataset.samples().iter().enumerate() {
        if limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        if model.predict(x)? == *y {
            out.push(k);
        }
    }
    Ok(out)
}

/// Attacks one sample with one variant.
pub fn attack_sample(
    model: &Network,
    x: &FeatureVector,
    y: ClassLabel,
    cfg: &AttackConfig,
) -> Result<(AttackOutcome, Option<ClassLabel>)> {
    if cfg.family.is_targeted() {
        let (outcome, t) = best_target_attack(model, x, y, cfg)?;
        Ok((outcome, Some(t)))
    } else {
        Ok((run_attack(model, x, y, cfg)?, None))
    }
}

pub fn run_campaign(
    model: &Network,
    dataset: &LabeledDataset,
    variants: &[AttackConfig],
    options: &CampaignOptions,
) -> Result<CampaignReport> {
    if variants.is_empty() {
        return Err(Error::InvalidParameter("no attack variants given".into()));
    }
    for v in variants {
        v.validate()?;
    }
    let indices = correctly_classified(model, dataset, options.sample_limit)?;
    if indices.is_empty() {
        return Err(Error::EmptyReport);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;

    let mut reports = Vec::with_capacity(variants.len());
    for cfg in variants {
        let samples: Vec<SampleResult> = pool.install(|| {
            indices
                .par_iter()
                .map(|&k| {
                    let (x, y) = &dataset.samples()[k];
                    let (outcome, target) = attack_sample(model, x, *y, cfg)?;
                    let record = MetricsRecord::from_outcome(model, x, &outcome)?;
                    Ok(SampleResult {
                        index: k,
                        true_class: *y,
                        target,
                        outcome,
                        record,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let aggregate = samples.iter().map(|s| &s.record).collect();
        reports.push(VariantReport {
            config: *cfg,
            aggregate,
            samples,
        });
    }
    Ok(CampaignReport {
        sample_count: indices.len(),
        variants: reports,
    })
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

impl CampaignReport {
    /// `attack,theta,epsilon,samples,successes,success_pct,mean_l0,mean_l2,mean_entropy,mean_iterations`
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "attack,theta,epsilon,samples,successes,success_pct,mean_l0,mean_l2,mean_entropy,mean_iterations\n",
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for v in &self.variants {
            let a = &v.aggregate;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                v.config.name(),
                v.config.theta,
                v.config.epsilon,
                a.attempts,
                a.successes,
                a.success_pct(),
                opt(a.mean_l0()),
                opt(a.mean_l2()),
                opt(a.mean_entropy()),
                opt(a.mean_iterations()),
            ));
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{} correctly-classified samples; L0/L2/H averaged over successful attacks; H in nats\n",
            self.sample_count
        );
        out.push_str(&format!(
            "{:<12} {:>5} {:>5} {:>7} {:>7} {:>7} {:>6}\n",
            "attack", "theta", "eps", "%", "L0", "L2", "H"
        ));
        for v in &self.variants {
            let a = &v.aggregate;
            out.push_str(&format!(
                "{:<12} {:>5} {:>5} {:>7.1} {:>7} {:>7} {:>6}\n",
                v.config.name(),
                v.config.theta,
                v.config.epsilon,
                a.success_pct(),
                fmt_opt(a.mean_l0(), 1),
                fmt_opt(a.mean_l2(), 2),
                fmt_opt(a.mean_entropy(), 2),
            ));
        }
        out
    }
}
