use ec2st::baselines::{
    lc2st_from_logits, mc2st, mmd2_biased, permutation_pvalue, sc2st_from_probs, Bandwidth, PermutationScheme,
};
use ec2st::seed::child_rng;
use proptest::prelude::*;
use rand::Rng;

/// Every assignment of `k` ones to `n` positions, by brute force over bit masks.
fn all_labelings(n: usize, k: usize) -> Vec<Vec<u8>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as u8).collect())
        .collect()
}

fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(p, y)| (**p > 0.5) == (**y == 1)).count();
    hits as f64 / labels.len() as f64
}

fn gap(logits: &[f64], labels: &[u8]) -> f64 {
    let mean = |c: u8| {
        let v: Vec<f64> = logits.iter().zip(labels).filter(|(_, y)| **y == c).map(|(l, _)| *l).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    (mean(1) - mean(0)).abs()
}

fn exhaustive_pvalue(observed: f64, stats: &[f64]) -> f64 {
    let ge = stats.iter().filter(|&&s| s >= observed).count();
    (1 + ge) as f64 / (stats.len() + 1) as f64
}

#[test]
fn three_point_tests_match_enumeration() {
    let probs = [0.8, 0.3, 0.6];
    let logits = [1.2, -0.4, 0.3];
    for labels in [[1u8, 0, 0], [1, 0, 1], [0, 1, 1]] {
        let k = labels.iter().filter(|&&y| y == 1).count();
        let perms = all_labelings(3, k);

        let want: Vec<f64> = perms.iter().map(|l| accuracy(&probs, l)).collect();
        let got = sc2st_from_probs(&probs, &labels, &PermutationScheme::Exhaustive).unwrap();
        assert_eq!(got.n_permutations, 3);
        assert_eq!(got.statistic, accuracy(&probs, &labels));
        assert_eq!(got.p_value, exhaustive_pvalue(got.statistic, &want));

        let want: Vec<f64> = perms.iter().map(|l| gap(&logits, l)).collect();
        let got = lc2st_from_logits(&logits, &labels, &PermutationScheme::Exhaustive).unwrap();
        assert!((got.statistic - gap(&logits, &labels)).abs() < 1e-15);
        assert_eq!(got.p_value, exhaustive_pvalue(got.statistic, &want));
    }
}

fn naive_mmd2(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> f64 {
    let k = |x: &[f64], y: &[f64]| {
        let d: f64 = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum();
        (-d / (2.0 * sigma * sigma)).exp()
    };
    let mut xx = 0.0;
    for x in a {
        for y in a {
            xx += k(x, y);
        }
    }
    let mut yy = 0.0;
    for x in b {
        for y in b {
            yy += k(x, y);
        }
    }
    let mut xy = 0.0;
    for x in a {
        for y in b {
            xy += k(x, y);
        }
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

fn random_points(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

#[test]
fn mmd_matches_double_loop() {
    let mut rng = child_rng(1, &[]);
    for _ in 0..100 {
        let a = random_points(&mut rng, 3, 2);
        let b = random_points(&mut rng, 3, 2);
        let sigma = rng.random_range(0.3..3.0);
        let got = mmd2_biased(&a, &b, sigma).unwrap();
        assert!((got - naive_mmd2(&a, &b, sigma)).abs() <= 1e-12);
    }
}

#[test]
fn identical_feature_sets_are_not_significant() {
    let mut rng = child_rng(2, &[]);
    let a = random_points(&mut rng, 10, 3);
    let res = mc2st(&a, &a, Bandwidth::Median, &PermutationScheme::random(3)).unwrap();
    assert!(res.statistic.abs() < 1e-12);
    assert!(res.p_value >= 0.5, "{}", res.p_value);
}

#[test]
fn permutation_tests_are_deterministic() {
    let mut rng = child_rng(3, &[]);
    let probs: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    let a = sc2st_from_probs(&probs, &labels, &PermutationScheme::random(9)).unwrap();
    let b = sc2st_from_probs(&probs, &labels, &PermutationScheme::random(9)).unwrap();
    assert_eq!(a, b);
    let f0 = random_points(&mut rng, 15, 2);
    let f1 = random_points(&mut rng, 12, 2);
    let a = mc2st(&f0, &f1, Bandwidth::Median, &PermutationScheme::random(4)).unwrap();
    let b = mc2st(&f0, &f1, Bandwidth::Median, &PermutationScheme::random(4)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn perfect_separation_hits_the_floor() {
    let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
    let probs: Vec<f64> = labels.iter().map(|&y| if y == 1 { 0.9 } else { 0.1 }).collect();
    let res = sc2st_from_probs(&probs, &labels, &PermutationScheme::random(5)).unwrap();
    assert_eq!(res.p_value, 1.0 / 501.0);
}

proptest! {
    #[test]
    fn mmd_is_symmetric_and_non_negative(seed in 0u64..1000, n in 1usize..8, m in 1usize..8) {
        let mut rng = child_rng(seed, &[]);
        let a = random_points(&mut rng, n, 2);
        let b = random_points(&mut rng, m, 2);
        let ab = mmd2_biased(&a, &b, 1.0).unwrap();
        let ba = mmd2_biased(&b, &a, 1.0).unwrap();
        prop_assert!(ab >= -1e-12);
        prop_assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn pvalues_stay_in_range(observed in -5.0f64..5.0, permuted in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let p = permutation_pvalue(observed, &permuted);
        prop_assert!(p >= 1.0 / (permuted.len() + 1) as f64 && p <= 1.0);
    }
}
