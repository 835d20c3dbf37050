//! Permutation classifier two-sample tests.
//!
//! All three tests condition on a classifier trained on separate data and
//! permute the labels of the held-out test fold:
//!
//! - accuracy of the thresholded classifier,
//! - absolute difference of the mean logits of the two classes,
//! - biased MMD² with a Gaussian kernel on the last hidden layer.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::models::MlpModel;
use crate::{seed, Error, Result};

pub const DEFAULT_PERMUTATIONS: usize = 500;

/// Largest number of label arrangements [`PermutationScheme::Exhaustive`]
/// will enumerate.
pub const MAX_EXHAUSTIVE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub permuted_statistics: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PermutationScheme {
    /// `count` uniform shuffles; shuffle `j` is seeded from `(seed, j)`.
    Random { count: usize, seed: u64 },
    /// Every distinct arrangement of the labels, including the observed one.
    Exhaustive,
}

impl PermutationScheme {
    pub fn random(seed: u64) -> Self {
        PermutationScheme::Random {
            count: DEFAULT_PERMUTATIONS,
            seed,
        }
    }
}

/// `(1 + #{permuted ≥ observed}) / (len + 1)`.
pub fn permutation_pvalue(observed: f64, permuted: &[f64]) -> f64 {
    let ge = permuted.iter().filter(|&&s| s >= observed).count();
    (1 + ge) as f64 / (permuted.len() + 1) as f64
}

/// Applies `stat` to the observed labels and to every permutation.
fn permutation_test<F>(labels: &[u8], scheme: &PermutationScheme, stat: F) -> Result<PermutationResult>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    let observed = stat(labels);
    let permuted: Vec<f64> = match *scheme {
        PermutationScheme::Random { count, seed } => {
            if count == 0 {
                return Err(Error::usage("at least one permutation is required"));
            }
            (0..count)
                .into_par_iter()
                .map(|j| {
                    let mut perm = labels.to_vec();
                    perm.shuffle(&mut seed::child_rng(seed, &[j as u64]));
                    stat(&perm)
                })
                .collect()
        }
        PermutationScheme::Exhaustive => arrangements(labels)?.iter().map(|p| stat(p)).collect(),
    };
    Ok(PermutationResult {
        statistic: observed,
        p_value: permutation_pvalue(observed, &permuted),
        n_permutations: permuted.len(),
        permuted_statistics: Some(permuted),
    })
}

/// Distinct arrangements of a binary label vector, in lexicographic order of
/// the positions of the ones.
fn arrangements(labels: &[u8]) -> Result<Vec<Vec<u8>>> {
    let n = labels.len();
    let k = labels.iter().filter(|&&y| y == 1).count();
    let mut total = 1u128;
    for i in 0..k {
        total = total * (n - i) as u128 / (i + 1) as u128;
    }
    if total > MAX_EXHAUSTIVE as u128 {
        return Err(Error::usage(format!("{total} arrangements are too many to enumerate")));
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut pos: Vec<usize> = (0..k).collect();
    loop {
        let mut v = vec![0u8; n];
        for &p in &pos {
            v[p] = 1;
        }
        out.push(v);
        // next combination
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if pos[i] < n - k + i {
                pos[i] += 1;
                for j in i + 1..k {
                    pos[j] = pos[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn check_two_classes(test: &[LabeledSample]) -> Result<()> {
    if test.is_empty() {
        return Err(Error::usage("empty test set"));
    }
    let ones = test.iter().filter(|s| s.y == 1).count();
    if ones == 0 || ones == test.len() {
        return Err(Error::usage("the test set must contain both classes"));
    }
    Ok(())
}

/// Accuracy of `prob > 1/2` against `labels`.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let correct = probs.iter().zip(labels).filter(|(p, y)| (**p > 0.5) == (**y == 1)).count();
    correct as f64 / labels.len() as f64
}

/// `|mean logit over class 1 − mean logit over class 0|`.
pub fn logit_gap(logits: &[f64], labels: &[u8]) -> f64 {
    let (mut s, mut n) = ([0.0; 2], [0usize; 2]);
    for (l, &y) in logits.iter().zip(labels) {
        s[y as usize] += l;
        n[y as usize] += 1;
    }
    (s[1] / n[1] as f64 - s[0] / n[0] as f64).abs()
}

/// Accuracy-based test.
pub fn sc2st(model: &MlpModel, test: &[LabeledSample], scheme: &PermutationScheme) -> Result<PermutationResult> {
    check_two_classes(test)?;
    let probs = test.iter().map(|s| model.predict_prob(&s.x)).collect::<Result<Vec<_>>>()?;
    sc2st_from_probs(&probs, &crate::data::labels(test), scheme)
}

/// [`sc2st`] on precomputed probabilities.
pub fn sc2st_from_probs(probs: &[f64], labels: &[u8], scheme: &PermutationScheme) -> Result<PermutationResult> {
    check_lengths(probs.len(), labels)?;
    permutation_test(labels, scheme, |l| accuracy(probs, l))
}

/// Mean-logit-difference test.
pub fn lc2st(model: &MlpModel, test: &[LabeledSample], scheme: &PermutationScheme) -> Result<PermutationResult> {
    check_two_classes(test)?;
    let logits = test.iter().map(|s| model.forward(&s.x)).collect::<Result<Vec<_>>>()?;
    lc2st_from_logits(&logits, &crate::data::labels(test), scheme)
}

/// [`lc2st`] on precomputed logits.
pub fn lc2st_from_logits(logits: &[f64], labels: &[u8], scheme: &PermutationScheme) -> Result<PermutationResult> {
    check_lengths(logits.len(), labels)?;
    permutation_test(labels, scheme, |l| logit_gap(logits, l))
}

fn check_lengths(n: usize, labels: &[u8]) -> Result<()> {
    if n != labels.len() {
        return Err(Error::usage(format!("{n} scores for {} labels", labels.len())));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    if labels.is_empty() || ones == 0 || ones == labels.len() {
        return Err(Error::usage("both classes must be present"));
    }
    Ok(())
}

/// Taps the last hidden layer of a trained network.
#[derive(Debug, Clone, Copy)]
pub struct FeatureExtractor<'a> {
    model: &'a MlpModel,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(model: &'a MlpModel) -> Self {
        FeatureExtractor { model }
    }

    pub fn dim(&self) -> usize {
        self.model.feature_dim()
    }

    pub fn extract(&self, xs: &[LabeledSample]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|s| self.model.features(&s.x)).collect()
    }
}

/// Gaussian kernel bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median of the pooled pairwise distances.
    Median,
    Fixed(f64),
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median pairwise Euclidean distance; 1 when every distance is zero.
pub fn median_heuristic(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn gram(points: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    let g = 1.0 / (2.0 * sigma * sigma);
    points
        .iter()
        .map(|a| points.iter().map(|b| (-g * sq_dist(a, b)).exp()).collect())
        .collect()
}

/// Biased MMD² from a pooled Gram matrix and group membership.
fn mmd2_from_gram(k: &[Vec<f64>], in_first: &[u8]) -> f64 {
    let mut s = [0.0; 3]; // xx, yy, xy
    let n1 = in_first.iter().filter(|&&g| g == 1).count() as f64;
    let n0 = in_first.len() as f64 - n1;
    for (i, row) in k.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            match (in_first[i], in_first[j]) {
                (0, 0) => s[0] += v,
                (1, 1) => s[1] += v,
                _ => s[2] += v,
            }
        }
    }
    s[0] / (n0 * n0) + s[1] / (n1 * n1) - s[2] / (n0 * n1)
}

/// Biased MMD² between two samples with a Gaussian kernel of width `sigma`.
pub fn mmd2_biased(features0: &[Vec<f64>], features1: &[Vec<f64>], sigma: f64) -> Result<f64> {
    if features0.is_empty() || features1.is_empty() {
        return Err(Error::usage("MMD needs two non-empty samples"));
    }
    if !(sigma > 0.0) {
        return Err(Error::usage("kernel bandwidth must be positive"));
    }
    let pooled: Vec<Vec<f64>> = features0.iter().chain(features1).cloned().collect();
    let groups: Vec<u8> = (0..pooled.len()).map(|i| u8::from(i >= features0.len())).collect();
    Ok(mmd2_from_gram(&gram(&pooled, sigma), &groups))
}

/// MMD test on feature vectors; permutes group membership over the pool.
pub fn mc2st(
    features0: &[Vec<f64>],
    features1: &[Vec<f64>],
    bandwidth: Bandwidth,
    scheme: &PermutationScheme,
) -> Result<PermutationResult> {
    if features0.is_empty() || features1.is_empty() {
        return Err(Error::usage("MMD needs two non-empty samples"));
    }
    let pooled: Vec<Vec<f64>> = features0.iter().chain(features1).cloned().collect();
    let sigma = match bandwidth {
        Bandwidth::Median => median_heuristic(&pooled),
        Bandwidth::Fixed(s) if s > 0.0 => s,
        Bandwidth::Fixed(_) => return Err(Error::usage("kernel bandwidth must be positive")),
    };
    let k = gram(&pooled, sigma);
    let groups: Vec<u8> = (0..pooled.len()).map(|i| u8::from(i >= features0.len())).collect();
    permutation_test(&groups, scheme, |g| mmd2_from_gram(&k, g))
}
