#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use jsma::attacks::{run_attack, AttackConfig, AttackFamily, Direction};
use jsma::campaign::{metrics, Aggregate, MetricsRecord};
use jsma::io::idx::{encode_images, encode_labels, parse_images, parse_labels, IdxImages};
use jsma::io::image::{quantize, ImageRecord};
use jsma::io::weights;
use jsma::nn::{ClassJacobian, ClassLabel, DenseLayer, FeatureVector, Network, OutputLayer};
use jsma::saliency::{
    all_feature_terms, best_pair_constrained, best_pair_maximal_with_stats, feature_terms,
    FeatureTerms, SaliencyMap, SearchDomain,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mlp_and_input() -> impl Strategy<Value = (Network, Vec<f64>)> {
    (any::<u64>(), 2usize..=20, 2usize..=5, 0usize..=2).prop_map(|(seed, n, c, depth)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = vec![6; depth];
        let model = random_mlp(&mut rng, n, &hidden, c);
        let x = random_input(&mut rng, n);
        (model, x)
    })
}

fn jacobian(max_c: usize, max_n: usize) -> impl Strategy<Value = ClassJacobian> {
    (2..=max_c, 2..=max_n).prop_flat_map(|(c, n)| {
        prop::collection::vec(-1.0f64..1.0, c * n)
            .prop_map(move |data| ClassJacobian::from_rows(c, n, OutputLayer::Logit, data).unwrap())
    })
}

fn family() -> impl Strategy<Value = AttackFamily> {
    prop::sample::select(AttackFamily::ALL.to_vec())
}

fn small_attack_case() -> impl Strategy<Value = (Network, Vec<f64>, AttackConfig)> {
    (
        mlp_and_input(),
        family(),
        prop::bool::ANY,
        prop::sample::select(vec![(1.0, 1.0), (0.1, 0.5), (0.3, 0.2)]),
    )
        .prop_map(|((model, x), family, soft, (theta, epsilon))| {
            let layer = if soft {
                OutputLayer::Softmax
            } else {
                OutputLayer::Logit
            };
            let cfg = AttackConfig::new(family, layer)
                .with_theta(theta)
                .with_epsilon(epsilon)
                .with_max_iters(Some(200));
            (model, x, cfg)
        })
}

/// Attack class: a non-predicted target for targeted families, else the prediction.
fn attack_class(model: &Network, x: &[f64], cfg: &AttackConfig) -> ClassLabel {
    let y = model.predict(x).unwrap();
    if cfg.family.is_targeted() {
        ClassLabel((y.index() + 1) % model.class_count())
    } else {
        y
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_jacobian_columns_sum_to_zero((model, x) in mlp_and_input()) {
        let jac = model.input_jacobian(&x, OutputLayer::Softmax, 1.0).unwrap();
        for i in 0..jac.features() {
            prop_assert!(jac.column_sum(i).abs() < 1e-9);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences((model, x) in mlp_and_input()) {
        prop_assume!(!near_kink(&model, &x, 1e-3));
        for layer in [OutputLayer::Softmax, OutputLayer::Logit] {
            let jac = model.input_jacobian(&x, layer, 1.0).unwrap();
            let fd = fd_jacobian(&model, &x, layer, 1e-5);
            for c in 0..jac.classes() {
                for i in 0..jac.features() {
                    let (a, b) = (jac.get(c, i), fd[c][i]);
                    match layer {
                        OutputLayer::Softmax => prop_assert!((a - b).abs() < 1e-4),
                        OutputLayer::Logit => prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs())),
                    }
                }
            }
        }
    }

    #[test]
    fn predict_ignores_constant_logit_shift((model, x) in mlp_and_input(), shift in -50.0f64..50.0) {
        let mut layers = model.layers().to_vec();
        let last = layers.last_mut().unwrap();
        let bias: Vec<f64> = last.bias.iter().map(|b| b + shift).collect();
        *last = DenseLayer::new(last.in_dim, last.out_dim, last.activation, last.weights.clone(), bias).unwrap();
        let shifted = Network::new(layers).unwrap();
        let z = model.forward_logits(&x).unwrap();
        let mut sorted = z.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        // Skip near-ties where the shift's rounding could reorder the top two.
        prop_assume!(sorted[0] - sorted[1] > 1e-9 * (1.0 + shift.abs()));
        prop_assert_eq!(model.predict(&x).unwrap(), shifted.predict(&x).unwrap());
    }

    #[test]
    fn forward_is_deterministic((model, x) in mlp_and_input()) {
        let a = model.forward_logits(&x).unwrap();
        let b = model.forward_logits(&x).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn pair_searches_agree_with_enumeration(jac in jacobian(4, 12), seed in any::<u64>(), theta in 0.01f64..=1.0) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = jac_rows(&jac);
        let n = jac.features();
        let idx: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.85)).collect();
        prop_assume!(idx.len() >= 2);
        let domain = SearchDomain::from_indices(n, idx.iter().copied());
        let y = rng.gen_range(0..jac.classes());
        let (got, _) = best_pair_maximal_with_stats(&all_feature_terms(&jac), &domain, ClassLabel(y), theta).unwrap();
        let got = got.map(|ch| (ch.class.index(), ch.pair.p, ch.pair.q, ch.direction, ch.score));
        prop_assert_eq!(got, brute_maximal(&rows, &idx, y, theta));
        for t in 0..jac.classes() {
            let terms = feature_terms(&jac, ClassLabel(t)).unwrap();
            for (map, pos) in [(SaliencyMap::Positive, true), (SaliencyMap::Negative, false)] {
                let got = best_pair_constrained(&terms, &domain, map, theta).unwrap()
                    .map(|ch| (ch.class.index(), ch.pair.p, ch.pair.q, ch.direction, ch.score));
                prop_assert_eq!(got, brute_constrained(&rows, &idx, t, pos, theta));
            }
        }
    }

    #[test]
    fn returned_scores_are_positive(jac in jacobian(4, 12)) {
        let domain = SearchDomain::full(jac.features());
        let (best, _) = best_pair_maximal_with_stats(&all_feature_terms(&jac), &domain, ClassLabel(0), 1.0).unwrap();
        if let Some(ch) = best {
            prop_assert!(ch.score > 0.0);
        }
        for t in 0..jac.classes() {
            let terms = feature_terms(&jac, ClassLabel(t)).unwrap();
            for map in [SaliencyMap::Positive, SaliencyMap::Negative] {
                if let Some(ch) = best_pair_constrained(&terms, &domain, map, 1.0).unwrap() {
                    prop_assert!(ch.score > 0.0);
                }
            }
        }
    }

    #[test]
    fn negating_terms_swaps_saliency_maps(jac in jacobian(4, 12), t in 0usize..4) {
        let t = ClassLabel(t % jac.classes());
        let terms = feature_terms(&jac, t).unwrap();
        let neg = FeatureTerms {
            alpha: terms.alpha.iter().map(|v| -v).collect(),
            beta: terms.beta.iter().map(|v| -v).collect(),
            target: t,
        };
        let domain = SearchDomain::full(jac.features());
        let key = |c: Option<jsma::saliency::PairChoice>| c.map(|c| (c.pair, c.score));
        prop_assert_eq!(
            key(best_pair_constrained(&terms, &domain, SaliencyMap::Positive, 1.0).unwrap()),
            key(best_pair_constrained(&neg, &domain, SaliencyMap::Negative, 1.0).unwrap())
        );
        prop_assert_eq!(
            key(best_pair_constrained(&terms, &domain, SaliencyMap::Negative, 1.0).unwrap()),
            key(best_pair_constrained(&neg, &domain, SaliencyMap::Positive, 1.0).unwrap())
        );
    }

    #[test]
    fn softmax_terms_reduce_to_squared_alpha((model, x) in mlp_and_input(), t in 0usize..5) {
        let jac = model.input_jacobian(&x, OutputLayer::Softmax, 1.0).unwrap();
        let t = ClassLabel(t % jac.classes());
        let terms = feature_terms(&jac, t).unwrap();
        for (a, b) in terms.alpha.iter().zip(&terms.beta) {
            prop_assert!((a + b).abs() < 1e-9);
        }
        // With beta = -alpha, S+ picks the largest positive pair sum of alpha.
        let n = jac.features();
        let mut best: Option<((usize, usize), f64)> = None;
        for p in 0..n {
            for q in p + 1..n {
                let a = terms.alpha[p] + terms.alpha[q];
                let b = terms.beta[p] + terms.beta[q];
                if a > 0.0 && b < 0.0 && best.is_none_or(|(_, s)| a * a > s + 1e-12) {
                    best = Some(((p, q), a * a));
                }
            }
        }
        let got = best_pair_constrained(&terms, &SearchDomain::full(n), SaliencyMap::Positive, 1.0).unwrap();
        match (got, best) {
            (Some(ch), Some((_, s))) => prop_assert!((ch.score - s).abs() <= 1e-9 * (1.0 + s)),
            (None, None) => {}
            (g, b) => prop_assert!(false, "search {:?} vs reference {:?}", g, b),
        }
    }

    #[test]
    fn maximal_search_scores_each_pair_once_per_class(jac in jacobian(4, 12), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = jac.features();
        let idx: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
        prop_assume!(idx.len() >= 2);
        let domain = SearchDomain::from_indices(n, idx.iter().copied());
        let (_, stats) = best_pair_maximal_with_stats(&all_feature_terms(&jac), &domain, ClassLabel(0), 1.0).unwrap();
        let g = idx.len();
        prop_assert_eq!(stats.pair_evaluations, jac.classes() * g * (g - 1) / 2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adversaries_stay_in_the_epsilon_ball((model, x, cfg) in small_attack_case()) {
        let t = attack_class(&model, &x, &cfg);
        let out = run_attack(&model, &FeatureVector::new(x.clone()).unwrap(), t, &cfg).unwrap();
        for (a, b) in x.iter().zip(out.adversary.values()) {
            prop_assert!((a - b).abs() <= cfg.epsilon + 1e-12);
            prop_assert!((0.0..=1.0).contains(b));
        }
    }

    #[test]
    fn domain_only_shrinks((model, x, cfg) in small_attack_case()) {
        let t = attack_class(&model, &x, &cfg);
        let out = run_attack(&model, &FeatureVector::new(x.clone()).unwrap(), t, &cfg).unwrap();
        let mut size = x.len();
        for step in &out.trace {
            prop_assert!(step.domain_size <= size);
            prop_assert!(size - step.domain_size <= 2);
            prop_assert_eq!(size - step.domain_size, step.removed.len());
            size = step.domain_size;
        }
        prop_assert!(out.iterations <= 200);
        prop_assert_eq!(out.iterations, out.trace.len());
    }

    #[test]
    fn perturbed_features_bounded_by_iterations((model, x, cfg) in small_attack_case()) {
        let t = attack_class(&model, &x, &cfg);
        let xv = FeatureVector::new(x.clone()).unwrap();
        let out = run_attack(&model, &xv, t, &cfg).unwrap();
        let probs = model.probabilities(&out.adversary, 1.0).unwrap();
        let m = metrics(&x, &out.adversary, &probs).unwrap();
        prop_assert!(m.l0 <= 2 * out.iterations);
        prop_assert!(m.entropy >= 0.0 && m.entropy <= (model.class_count() as f64).ln() + 1e-12);
    }

    #[test]
    fn no_feature_moves_both_ways((model, x, cfg) in small_attack_case()) {
        let t = attack_class(&model, &x, &cfg);
        let out = run_attack(&model, &FeatureVector::new(x).unwrap(), t, &cfg).unwrap();
        let mut sign = vec![0.0f64; model.input_dim()];
        for step in &out.trace {
            for u in step.updates.iter().filter(|u| u.applied) {
                let d = step.choice.direction.signum();
                prop_assert!(sign[u.index] != -d, "feature {} reversed", u.index);
                sign[u.index] = d;
            }
        }
    }

    #[test]
    fn attacks_are_deterministic((model, x, cfg) in small_attack_case()) {
        let t = attack_class(&model, &x, &cfg);
        let xv = FeatureVector::new(x).unwrap();
        let a = run_attack(&model, &xv, t, &cfg).unwrap();
        let b = run_attack(&model, &xv, t, &cfg).unwrap();
        prop_assert_eq!(a.trace_csv(), b.trace_csv());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn monotone_families_only_step_one_way((model, x, cfg) in small_attack_case()) {
        let expected = match cfg.family {
            AttackFamily::Targeted(d) | AttackFamily::NonTargeted(d) => d,
            AttackFamily::Maximal => return Ok(()),
        };
        let t = attack_class(&model, &x, &cfg);
        let out = run_attack(&model, &FeatureVector::new(x).unwrap(), t, &cfg).unwrap();
        for step in &out.trace {
            let sign = if expected == Direction::Increase { 1.0 } else { -1.0 };
            prop_assert_eq!(step.choice.direction, sign * cfg.theta);
            prop_assert!(step.updates.iter().all(|u| u.applied));
        }
    }
}

fn record() -> impl Strategy<Value = MetricsRecord> {
    (
        0usize..50,
        0.0f64..5.0,
        0.0f64..2.3,
        any::<bool>(),
        0usize..40,
    )
        .prop_map(|(l0, l2, entropy, success, iterations)| MetricsRecord {
            l0,
            l2,
            entropy,
            success,
            iterations,
        })
}

proptest! {
    #[test]
    fn aggregation_is_linear(a in prop::collection::vec(record(), 0..30), b in prop::collection::vec(record(), 0..30)) {
        let whole: Aggregate = a.iter().chain(&b).collect();
        let (aa, ab): (Aggregate, Aggregate) = (a.iter().collect(), b.iter().collect());
        let mut merged = aa;
        merged.merge(&ab);
        prop_assert_eq!(whole.attempts, merged.attempts);
        prop_assert_eq!(whole.successes, merged.successes);
        let close = |x: Option<f64>, y: Option<f64>| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * (1.0 + x.abs()),
            (None, None) => true,
            _ => false,
        };
        prop_assert!(close(whole.mean_l0(), merged.mean_l0()));
        prop_assert!(close(whole.mean_l2(), merged.mean_l2()));
        prop_assert!(close(whole.mean_entropy(), merged.mean_entropy()));
        // Weighted mean of the part means.
        if aa.successes > 0 && ab.successes > 0 {
            let w = (aa.mean_l2().unwrap() * aa.successes as f64 + ab.mean_l2().unwrap() * ab.successes as f64)
                / (aa.successes + ab.successes) as f64;
            prop_assert!((whole.mean_l2().unwrap() - w).abs() <= 1e-12 * (1.0 + w));
        }
    }

    #[test]
    fn quantization_error_is_at_most_half_a_step(v in prop::collection::vec(0.0f64..=1.0, 2..64)) {
        let x = FeatureVector::new(v).unwrap();
        let img = ImageRecord::from_features(x.len(), 1, 1, &x).unwrap();
        for (a, b) in x.iter().zip(img.to_features()) {
            prop_assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn quantize_rounds_to_nearest(v in 0.0f64..=1.0) {
        let q = quantize(v) as f64;
        prop_assert!((q - v * 255.0).abs() <= 0.5 + 1e-9);
    }

    #[test]
    fn netpbm_round_trips(w in 1usize..8, h in 1usize..8, rgb in any::<bool>(), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = if rgb { 3 } else { 1 };
        let pixels = (0..w * h * channels).map(|_| rng.gen()).collect();
        let img = ImageRecord::new(w, h, channels, pixels).unwrap();
        let bytes = img.encode();
        let back = ImageRecord::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn idx_round_trips(count in 0usize..6, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = IdxImages { rows, cols, pixels: (0..count * rows * cols).map(|_| rng.gen()).collect() };
        let labels: Vec<u8> = (0..count).map(|_| rng.gen_range(0..10)).collect();
        prop_assert_eq!(parse_images(&encode_images(&images)).unwrap(), images);
        prop_assert_eq!(parse_labels(&encode_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn weights_round_trip_bit_exactly((model, _) in mlp_and_input()) {
        let text = weights::to_string(&model);
        let back = weights::from_str(&text).unwrap();
        prop_assert_eq!(&back, &model);
        prop_assert_eq!(weights::to_string(&back), text);
    }
}
