use proptest::prelude::*;
use wiopen_core::data::{open_set_split, resample_time};
use wiopen_core::kv;
use wiopen_core::metrics::{auroc, openness, sig6};
use wiopen_core::osgr::{compute_threshold, cosine_sim, knn_candidate, neighbor_probs, FeatureBank};
use wiopen_core::preprocess::{butterworth, min_max_normalize, FilterMode};
use wiopen_core::uncertainty::{psi_domain, Metric};

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| unit(&v))
}

/// Pairwise oracle: known ranks below unknown counts 1, ties count 1/2.
fn pairwise_auroc(known: &[f64], unknown: &[f64]) -> f64 {
    let mut twice = 0u64;
    for k in known {
        for u in unknown {
            twice += match k.partial_cmp(u).unwrap() {
                std::cmp::Ordering::Less => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Greater => 0,
            };
        }
    }
    twice as f64 / (2 * known.len() * unknown.len()) as f64
}

/// Rotates every vector in the (i, j) plane.
fn givens(v: &[f64], i: usize, j: usize, angle: f64) -> Vec<f64> {
    let (s, c) = angle.sin_cos();
    let mut out = v.to_vec();
    out[i] = c * v[i] - s * v[j];
    out[j] = s * v[i] + c * v[j];
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn auroc_matches_pairwise_oracle(
        known in prop::collection::vec(0u8..12, 1..40),
        unknown in prop::collection::vec(0u8..12, 1..40),
    ) {
        let k: Vec<f64> = known.iter().map(|&x| x as f64 * 0.25).collect();
        let u: Vec<f64> = unknown.iter().map(|&x| x as f64 * 0.25).collect();
        prop_assert_eq!(auroc(&k, &u).unwrap(), pairwise_auroc(&k, &u));
    }

    #[test]
    fn auroc_is_order_free(scores in prop::collection::vec(-5.0f64..5.0, 2..30), split in 1usize..29) {
        let split = split.min(scores.len() - 1);
        let (k, u) = scores.split_at(split);
        let mut kr = k.to_vec();
        kr.reverse();
        prop_assert_eq!(auroc(k, u).unwrap(), auroc(&kr, u).unwrap());
        let flipped = auroc(u, k).unwrap();
        prop_assert!((auroc(k, u).unwrap() + flipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn openness_grows_with_unknowns(y in 1usize..20, q in 0usize..20) {
        let a = openness(y, q).unwrap();
        let b = openness(y, q + 1).unwrap();
        prop_assert!((0.0..1.0).contains(&a));
        prop_assert!(b > a);
    }

    #[test]
    fn neighbor_probs_ignore_shifts(
        sims in prop::collection::vec(-1.0f64..1.0, 2..20),
        shift in -50.0f64..50.0,
        gamma in 0.02f64..2.0,
        self_pick in any::<prop::sample::Index>(),
    ) {
        let me = self_pick.index(sims.len());
        let p = neighbor_probs(&sims, Some(me), gamma).unwrap();
        let shifted: Vec<f64> = sims.iter().map(|s| s + shift).collect();
        let q = neighbor_probs(&shifted, Some(me), gamma).unwrap();
        prop_assert_eq!(p[me], 0.0);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(v in unit_vec(6), u in unit_vec(6)) {
        let a = cosine_sim(&v, &u).unwrap();
        prop_assert_eq!(a, cosine_sim(&u, &v).unwrap());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a));
    }

    #[test]
    fn threshold_is_linear_in_xi(
        sums in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0.0f64..3.0), 1..6), 1..6),
        xi in 0.0f64..4.0,
    ) {
        prop_assume!(sums.iter().any(|b| b.iter().any(|s| s.is_some())));
        let base = compute_threshold(&sums, 1.0).unwrap();
        let t = compute_threshold(&sums, xi).unwrap();
        prop_assert!((t - xi * base).abs() <= 1e-12 * (1.0 + t.abs()));
        prop_assert!(compute_threshold(&sums, xi + 0.5).unwrap() >= t);
    }

    #[test]
    fn knn_ignores_global_rotation(
        rows in prop::collection::vec(unit_vec(5), 4..16),
        query in unit_vec(5),
        angle in -3.0f64..3.0,
        k in 1usize..4,
    ) {
        let labels: Vec<u32> = (0..rows.len() as u32).map(|i| i % 3).collect();
        let bank = FeatureBank::new(rows.clone(), labels.clone(), 0.5).unwrap();
        let rot = |v: &Vec<f64>| givens(&givens(v, 0, 3, angle), 1, 4, 0.7 * angle);
        let turned = FeatureBank::new(rows.iter().map(rot).collect(), labels, 0.5).unwrap();
        let a = knn_candidate(&query, &bank, k, None).unwrap();
        let b = knn_candidate(&rot(&query), &turned, k, None).unwrap();
        prop_assert!((a.score - b.score).abs() < 1e-9);
        // rotation may reorder exact ties only; scores of the K-set agree
        if a.members == b.members {
            prop_assert_eq!(a.label, b.label);
        }
    }

    #[test]
    fn bank_update_keeps_rows_unit(
        rows in prop::collection::vec(unit_vec(4), 3..8),
        fresh in unit_vec(4),
        m in 0.0f64..0.95,
    ) {
        let labels = vec![0; rows.len()];
        let mut bank = FeatureBank::new(rows.clone(), labels, m).unwrap();
        bank.update(&[1], &[fresh.clone()]).unwrap();
        let n = bank.row(1).iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12 || n == 1.0);
        prop_assert_eq!(bank.row(0), &rows[0][..]);
        if m == 0.0 {
            for (a, b) in bank.row(1).iter().zip(&fresh) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_partitions_every_record(
        labels in prop::collection::vec(0u32..5, 10..80),
        seed in any::<u64>(),
        frac in 0.1f64..0.9,
    ) {
        let known: std::collections::BTreeSet<u32> = [0, 1, 2].into();
        prop_assume!(known.iter().all(|c| labels.iter().filter(|&&l| l == *c).count() >= 2));
        let s = open_set_split(&labels, &known, seed, frac).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test_known).chain(&s.test_unknown).cloned().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        prop_assert!(s.test_unknown.iter().all(|&i| !known.contains(&labels[i])));
    }

    #[test]
    fn resample_hits_target_length(xs in prop::collection::vec(-3.0f64..3.0, 1..50), n in 2usize..80) {
        if xs.len() < 2 {
            prop_assert!(resample_time(&xs, n).is_err());
            return Ok(());
        }
        let r = resample_time(&xs, n).unwrap();
        prop_assert_eq!(r.len(), n);
        let (lo, hi) = xs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        prop_assert!(r.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn min_max_lands_in_unit_range(mut xs in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        min_max_normalize(&mut xs);
        prop_assert!(xs.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn filtfilt_is_linear(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        alpha in -2.0f64..2.0,
    ) {
        let sos = butterworth(FilterMode::Lowpass, 4, 40.0, 1000.0).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
        let fa = sos.filtfilt(&a).unwrap();
        let fb = sos.filtfilt(&b).unwrap();
        let fm = sos.filtfilt(&mix).unwrap();
        for i in 0..64 {
            prop_assert!((fm[i] - (alpha * fa[i] + fb[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn domain_term_ignores_translation(
        feats in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), 4..12),
        shift in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let labels: Vec<u32> = (0..feats.len() as u32).map(|i| i % 2).collect();
        let moved: Vec<Vec<f64>> = feats.iter().map(|f| f.iter().zip(&shift).map(|(x, s)| x + s).collect()).collect();
        let a = psi_domain(&feats, &labels, Metric::Euclidean).unwrap().0;
        let b = psi_domain(&moved, &labels, Metric::Euclidean).unwrap().0;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn kv_floats_roundtrip(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let text = kv::render(&[("v", kv::float(x))]);
        let back = kv::parse(&text).unwrap();
        prop_assert_eq!(back[0].1.parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn sig6_keeps_six_digits(x in -1e12f64..1e12) {
        prop_assume!(x != 0.0);
        let back: f64 = sig6(x).parse().unwrap();
        prop_assert!(((back - x) / x).abs() <= 5e-6, "{} -> {}", x, sig6(x));
    }
}
