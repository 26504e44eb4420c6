//! Pairwise saliency search.
//!
//! For a class `t`, every feature `i` contributes `alpha_i = d out_t / d x_i`
//! and `beta_i = sum_{c != t} d out_c / d x_i`. A pair `(p, q)` is scored by
//! `-A * B` with `A = alpha_p + alpha_q` and `B = beta_p + beta_q`.
//!
//! * [`best_pair_constrained`] applies the S+ (`A > 0`, `B < 0`) or S-
//!   (`A < 0`, `B > 0`) sign test to the pair sums.
//! * [`best_pair_maximal`] drops the sign test, sweeps every class and picks
//!   the perturbation direction from the sign of `A`.
//!
//! Both searches keep the first maximum in lexicographic order of
//! `(t, p, q)`, compare scores strictly against a running best that starts
//! at zero, and therefore only ever return strictly positive scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ClassJacobian, ClassLabel};

/// Per-feature saliency ingredients for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTerms {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub target: ClassLabel,
}

impl FeatureTerms {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Splits the Jacobian into the target-class row and the sum of all other rows.
pub fn feature_terms(jac: &ClassJacobian, target: ClassLabel) -> Result<FeatureTerms> {
    if target.index() >= jac.classes() {
        return Err(Error::InvalidParameter(format!(
            "class {target} out of range for {} classes",
            jac.classes()
        )));
    }
    let n = jac.features();
    let alpha = jac.row(target.index()).to_vec();
    let mut beta = vec![0.0; n];
    for c in (0..jac.classes()).filter(|&c| c != target.index()) {
        for (b, &v) in beta.iter_mut().zip(jac.row(c)) {
            *b += v;
        }
    }
    Ok(FeatureTerms {
        alpha,
        beta,
        target,
    })
}

/// Terms for every class, in class order.
pub fn all_feature_terms(jac: &ClassJacobian) -> Vec<FeatureTerms> {
    (0..jac.classes())
        .map(|c| feature_terms(jac, ClassLabel(c)).expect("class in range"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPair {
    pub p: usize,
    pub q: usize,
}

/// Sign test applied by the constrained search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaliencyMap {
    /// `A > 0` and `B < 0`.
    Positive,
    /// `A < 0` and `B > 0`.
    Negative,
}

impl SaliencyMap {
    #[inline]
    fn admits(self, a: f64, b: f64) -> bool {
        match self {
            SaliencyMap::Positive => a > 0.0 && b < 0.0,
            SaliencyMap::Negative => a < 0.0 && b > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairChoice {
    pub pair: PixelPair,
    /// `-A * B`, always `> 0`.
    pub score: f64,
    /// Signed step `theta'` to apply to both features.
    pub direction: f64,
    /// Class whose terms produced the score.
    pub class: ClassLabel,
}

/// The active feature set: indices still eligible for perturbation.
///
/// Kept as a sorted index list plus a membership mask. Removal is permanent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchDomain {
    member: Vec<bool>,
    indices: Vec<usize>,
}

impl SearchDomain {
    /// Every index in `0..n`.
    pub fn full(n: usize) -> Self {
        SearchDomain {
            member: vec![true; n],
            indices: (0..n).collect(),
        }
    }

    /// Domain over `0..n` holding only `active`.
    pub fn from_indices(n: usize, active: impl IntoIterator<Item = usize>) -> Self {
        let mut member = vec![false; n];
        for k in active {
            member[k] = true;
        }
        let indices = (0..n).filter(|&k| member[k]).collect();
        SearchDomain { member, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.member.get(k).copied().unwrap_or(false)
    }

    /// Removes `k`; returns whether it was present.
    pub fn remove(&mut self, k: usize) -> bool {
        if !self.contains(k) {
            return false;
        }
        self.member[k] = false;
        if let Ok(pos) = self.indices.binary_search(&k) {
            self.indices.remove(pos);
        }
        true
    }

    /// Active indices in ascending order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn require_pair(&self) -> Result<()> {
        if self.len() < 2 {
            Err(Error::DomainExhausted {
                remaining: self.len(),
            })
        } else {
            Ok(())
        }
    }
}

/// Counters reported by the pair searches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Number of `(t, p, q)` pair-combine evaluations.
    pub pair_evaluations: usize,
}

/// Best pair under the S+ or S- sign test for a single class. `direction` is
/// the signed step the caller will apply and is copied into the choice.
pub fn best_pair_constrained(
    terms: &FeatureTerms,
    domain: &SearchDomain,
    map: SaliencyMap,
    direction: f64,
) -> Result<Option<PairChoice>> {
    domain.require_pair()?;
    let (alpha, beta) = gather(terms, domain);
    let idx = domain.indices();
    let mut best: Option<(usize, usize)> = None;
    let mut gamma = 0.0;
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            let a = alpha[i] + alpha[j];
            let b = beta[i] + beta[j];
            if !map.admits(a, b) {
                continue;
            }
            let score = -a * b;
            if score > gamma {
                gamma = score;
                best = Some((i, j));
            }
        }
    }
    Ok(best.map(|(i, j)| PairChoice {
        pair: PixelPair {
            p: idx[i],
            q: idx[j],
        },
        score: gamma,
        direction,
        class: terms.target,
    }))
}

/// Best `(class, pair)` over all classes with no sign test.
///
/// `terms[t]` must hold the terms for class `t`. The direction is
/// `-sign(A) * theta` when the winning class is `true_class` and
/// `sign(A) * theta` otherwise, with `sign(0) = +1`.
pub fn best_pair_maximal(
    terms: &[FeatureTerms],
    domain: &SearchDomain,
    true_class: ClassLabel,
    theta: f64,
) -> Result<Option<PairChoice>> {
    best_pair_maximal_with_stats(terms, domain, true_class, theta).map(|(choice, _)| choice)
}

/// [`best_pair_maximal`], also reporting how many pair combinations were scored.
pub fn best_pair_maximal_with_stats(
    terms: &[FeatureTerms],
    domain: &SearchDomain,
    true_class: ClassLabel,
    theta: f64,
) -> Result<(Option<PairChoice>, SearchStats)> {
    domain.require_pair()?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "theta must be in (0, 1], got {theta}"
        )));
    }
    for (c, t) in terms.iter().enumerate() {
        if t.target.index() != c {
            return Err(Error::InvalidParameter(format!(
                "terms[{c}] belong to class {}",
                t.target
            )));
        }
    }

    let idx = domain.indices();
    let mut stats = SearchStats::default();
    let mut gamma = 0.0;
    let mut best: Option<(usize, usize, usize, f64)> = None;
    for (c, class_terms) in terms.iter().enumerate() {
        let (alpha, beta) = gather(class_terms, domain);
        for i in 0..idx.len() {
            for j in i + 1..idx.len() {
                stats.pair_evaluations += 1;
                let a = alpha[i] + alpha[j];
                let score = -a * (beta[i] + beta[j]);
                if score > gamma {
                    gamma = score;
                    best = Some((c, i, j, a));
                }
            }
        }
    }

    let choice = best.map(|(c, i, j, a)| {
        let sign = if a >= 0.0 { 1.0 } else { -1.0 };
        let direction = if c == true_class.index() {
            -sign * theta
        } else {
            sign * theta
        };
        PairChoice {
            pair: PixelPair {
                p: idx[i],
                q: idx[j],
            },
            score: gamma,
            direction,
            class: ClassLabel(c),
        }
    });
    Ok((choice, stats))
}

fn gather(terms: &FeatureTerms, domain: &SearchDomain) -> (Vec<f64>, Vec<f64>) {
    domain
        .indices()
        .iter()
        .map(|&k| (terms.alpha[k], terms.beta[k]))
        .unzip()
}
