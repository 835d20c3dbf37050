//! Sequential classifier two-sample test with bounded batch e-values.
//!
//! Batch `m` is scored by a classifier trained only on batches `< m`:
//!
//! ```text
//!     E(m) = Π_n  [σ_n / q̂]^{y_n} · [(1 − σ_n) / (1 − q̂)]^{1 − y_n}
//! ```
//!
//! where `σ_n = σ(g(x_n))` and `q̂` is the label frequency of the batch itself
//! (the Bernoulli MLE under the null). Each factor is then mixed with the
//! null density, `Ẽ_n = λ + (1 − λ)·E_n`, which keeps every per-point log
//! e-value inside `[ln λ, ln(λ + (1 − λ)N)]`. The weight used for batch `m+1`
//! maximises `Σ_n ln Ẽ_n` on batch `m`.
//!
//! Data plumbing follows the usual recipe: the first batch is only split into
//! training and validation sets and contributes `E(1) = 1`; afterwards the
//! previous validation batch is folded into the training set and the newest
//! batch becomes the validation set.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{labels, LabeledSample};
use crate::eprocess::{compensated_sum, log_threshold, EProcess, LogEValue, Verdict};
use crate::models::{bernoulli_mle, train, train_from, Architecture, MlpModel, TrainConfig};
use crate::{seed, Error, Result};

/// Checkpoint format version for [`Ec2stState`].
pub const CHECKPOINT_VERSION: u32 = 1;

/// Per-point evidence from one labeled sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointEValue {
    /// `ln p_A(y | x)` under the classifier.
    pub log_p_alt: f64,
    /// `ln p(y | q̂)` under the batch MLE.
    pub log_p_null: f64,
    pub log_e: f64,
}

impl PointEValue {
    pub(crate) fn new(log_p_alt: f64, log_p_null: f64) -> Self {
        PointEValue {
            log_p_alt,
            log_p_null,
            log_e: log_p_alt - log_p_null,
        }
    }

    /// `ln(λ + (1 − λ)·E)`, exactly zero when `E = 1`.
    pub fn mixed_log(&self, lambda: f64) -> f64 {
        ((1.0 - lambda) * self.log_e.exp_m1()).ln_1p()
    }
}

/// `ln p_A(y | x)` for a classifier probability `prob = P(y = 1 | x)`.
pub(crate) fn log_prob_of_label(prob: f64, y: u8) -> f64 {
    if y == 1 {
        prob.ln()
    } else {
        (1.0 - prob).ln()
    }
}

pub(crate) fn check_probs_labels(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(Error::usage("classifier probabilities must lie in (0, 1)"));
    }
    Ok(())
}

/// Unmixed batch log e-value and the per-point records it is built from.
pub fn batch_log_evalue(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<PointEValue>)> {
    check_probs_labels(probs, labels)?;
    let null = bernoulli_mle(labels)?;
    let points = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| Ok(PointEValue::new(log_prob_of_label(p, y), null.log_density(y)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok((sum_log_e(&points), points))
}

pub(crate) fn sum_log_e(points: &[PointEValue]) -> f64 {
    compensated_sum(points.iter().map(|p| p.log_e))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::usage(format!("mixture weight must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

/// `Σ_n ln(λ + (1 − λ)·E_n)`.
pub fn bounded_log_evalue(points: &[PointEValue], lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(compensated_sum(points.iter().map(|p| p.mixed_log(lambda))))
}

/// Objective maximised when choosing the next mixture weight; identical to
/// [`bounded_log_evalue`] without the range check.
pub fn lambda_objective(points: &[PointEValue], lambda: f64) -> f64 {
    compensated_sum(points.iter().map(|p| p.mixed_log(lambda)))
}

/// `d/dλ Σ_n ln(λ + (1 − λ)E_n) = Σ_n (1 − E_n) / (λ + (1 − λ)E_n)`.
pub fn lambda_derivative(points: &[PointEValue], lambda: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let e = p.log_e.exp();
            (1.0 - e) / (lambda + (1.0 - lambda) * e)
        })
        .sum()
}

/// Bisection tolerance on `λ`.
pub const LAMBDA_TOLERANCE: f64 = 1e-8;

/// Maximises the concave mixture objective over `[λ_min, λ_max]` by
/// bisection on its derivative. A derivative that is non-positive at
/// `λ_min` (including a flat objective) returns `λ_min`; one that is still
/// positive at `λ_max` returns `λ_max`.
pub fn optimize_lambda(points: &[PointEValue], bounds: (f64, f64)) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::usage("cannot fit a mixture weight on an empty batch"));
    }
    let (lo, hi) = bounds;
    check_lambda(lo)?;
    check_lambda(hi)?;
    if lo >= hi {
        return Err(Error::usage(format!("empty lambda range [{lo}, {hi}]")));
    }
    if lambda_derivative(points, lo) <= 0.0 {
        return Ok(lo);
    }
    if lambda_derivative(points, hi) >= 0.0 {
        return Ok(hi);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > LAMBDA_TOLERANCE {
        let mid = 0.5 * (a + b);
        if lambda_derivative(points, mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// A fitted probabilistic classifier `x ↦ P(y = 1 | x)`.
pub trait Classifier {
    /// Probability of label 1, strictly inside `(0, 1)`.
    fn prob(&self, x: &[f64]) -> Result<f64>;
}

impl Classifier for MlpModel {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        self.predict_prob(x)
    }
}

/// Ignores the features and always answers `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantClassifier(pub f64);

impl Classifier for ConstantClassifier {
    fn prob(&self, _x: &[f64]) -> Result<f64> {
        Ok(self.0)
    }
}

/// Lookup table on a discrete scalar feature: `x[0]` is a row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableClassifier {
    pub probs: Vec<f64>,
}

impl Classifier for TableClassifier {
    fn prob(&self, x: &[f64]) -> Result<f64> {
        let idx = x.first().copied().unwrap_or(-1.0);
        if idx < 0.0 || idx.fract() != 0.0 || idx as usize >= self.probs.len() {
            return Err(Error::usage(format!("feature {idx} is not a table row")));
        }
        Ok(self.probs[idx as usize].clamp(crate::models::mlp::PROB_CLAMP, 1.0 - crate::models::mlp::PROB_CLAMP))
    }
}

/// Something that turns past data into a classifier.
pub trait Learner {
    type Model: Classifier + Clone + Serialize + DeserializeOwned;

    /// Fits on `train` with early stopping on `val`. `previous` is the model
    /// from the preceding step, if any.
    fn fit(
        &self,
        previous: Option<&Self::Model>,
        train: &[LabeledSample],
        val: &[LabeledSample],
        seed: u64,
    ) -> Result<Self::Model>;
}

/// Trains the feed-forward classifier on every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpLearner {
    pub hidden: Vec<usize>,
    pub layer_norm: bool,
    pub standardize_inputs: bool,
    pub train: TrainConfig,
    /// Continue from the previous step's parameters instead of
    /// re-initialising.
    pub warm_start: bool,
}

impl Default for MlpLearner {
    fn default() -> Self {
        MlpLearner {
            hidden: vec![30, 30],
            layer_norm: true,
            standardize_inputs: true,
            train: TrainConfig::default(),
            warm_start: true,
        }
    }
}

impl Learner for MlpLearner {
    type Model = MlpModel;

    fn fit(
        &self,
        previous: Option<&MlpModel>,
        train_set: &[LabeledSample],
        val_set: &[LabeledSample],
        seed: u64,
    ) -> Result<MlpModel> {
        let config = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let fitted = match previous {
            Some(prev) if self.warm_start => train_from(prev.clone(), train_set, val_set, &config)?,
            _ => {
                let input_dim = train_set.first().map_or(0, |s| s.x.len());
                let arch = Architecture {
                    input_dim,
                    hidden: self.hidden.clone(),
                    layer_norm: self.layer_norm,
                    standardize_inputs: self.standardize_inputs,
                };
                train(&arch, train_set, val_set, &config)?
            }
        };
        Ok(fitted.0)
    }
}

/// Always returns the same classifier; useful for oracle experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedLearner<C>(pub C);

impl<C: Classifier + Clone + Serialize + DeserializeOwned> Learner for FixedLearner<C> {
    type Model = C;

    fn fit(&self, _: Option<&C>, _: &[LabeledSample], _: &[LabeledSample], _: u64) -> Result<C> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ec2stConfig {
    pub alpha: f64,
    pub initial_lambda: f64,
    pub lambda_bounds: (f64, f64),
    /// Train/validation fractions of the first batch.
    pub first_batch_split: (f64, f64),
    /// Refit the mixture weight after every batch; otherwise keep
    /// `initial_lambda` throughout.
    pub adapt_lambda: bool,
    /// Parent seed for the per-step training seeds.
    pub seed: u64,
}

impl Default for Ec2stConfig {
    fn default() -> Self {
        Ec2stConfig {
            alpha: 0.05,
            initial_lambda: 0.5,
            lambda_bounds: (1e-6, 1.0 - 1e-6),
            first_batch_split: (0.8, 0.2),
            adapt_lambda: true,
            seed: 0,
        }
    }
}

impl Ec2stConfig {
    pub fn validate(&self) -> Result<()> {
        log_threshold(self.alpha)?;
        let (lo, hi) = self.lambda_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::usage(format!("lambda bounds must satisfy 0 < min < max < 1, got ({lo}, {hi})")));
        }
        if !(lo..=hi).contains(&self.initial_lambda) {
            return Err(Error::usage("initial lambda must lie within the lambda bounds"));
        }
        let (tr, va) = self.first_batch_split;
        if !(tr > 0.0 && va > 0.0 && (tr + va - 1.0).abs() < 1e-9) {
            return Err(Error::usage("first-batch split fractions must be positive and sum to 1"));
        }
        Ok(())
    }
}

/// One line of the per-batch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLogEntry {
    /// 1-based batch index.
    pub batch: usize,
    /// Mixture weight used for this batch.
    pub lambda: f64,
    pub log_increment: f64,
    /// Cumulative log e-value after this batch.
    pub log_e: f64,
    pub rejected: bool,
}

/// Writes entries as JSON lines.
pub fn write_batch_log<W: Write>(mut out: W, entries: &[BatchLogEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// State of one sequential test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "M: DeserializeOwned", serialize = "M: Serialize"))]
pub struct Ec2stState<M> {
    pub train_set: Vec<LabeledSample>,
    pub val_set: Vec<LabeledSample>,
    /// Weight that will be used for the next batch.
    pub lambda: f64,
    pub process: EProcess,
    /// Number of batches consumed so far.
    pub batch_index: usize,
    pub samples_consumed: usize,
    pub model: Option<M>,
    pub log: Vec<BatchLogEntry>,
}

#[derive(Deserialize)]
#[serde(bound(deserialize = "M: DeserializeOwned"))]
struct Checkpoint<M> {
    version: u32,
    state: Ec2stState<M>,
}

impl<M: Serialize + DeserializeOwned> Ec2stState<M> {
    pub fn new(config: &Ec2stConfig) -> Result<Self> {
        config.validate()?;
        Ok(Ec2stState {
            train_set: Vec::new(),
            val_set: Vec::new(),
            lambda: config.initial_lambda,
            process: EProcess::new(config.alpha)?,
            batch_index: 0,
            samples_consumed: 0,
            model: None,
            log: Vec::new(),
        })
    }

    pub fn verdict(&self) -> Verdict {
        self.process.verdict(self.samples_consumed)
    }

    /// Serialises to the versioned checkpoint format. A stream that started at
    /// cursor 0 resumes at `batch_index`.
    pub fn to_checkpoint(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a, M> {
            version: u32,
            state: &'a Ec2stState<M>,
        }
        Ok(serde_json::to_string(&Out {
            version: CHECKPOINT_VERSION,
            state: self,
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let cp: Checkpoint<M> = serde_json::from_str(text)?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: cp.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(cp.state)
    }
}

/// Processes one batch. The first batch only seeds the training and
/// validation sets; every later batch is scored, multiplied into the
/// e-process, used to fit the next mixture weight and then becomes the new
/// validation set.
pub fn ec2st_step<L: Learner>(
    state: &mut Ec2stState<L::Model>,
    batch: Vec<LabeledSample>,
    config: &Ec2stConfig,
    learner: &L,
) -> Result<Verdict> {
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    state.batch_index += 1;
    state.samples_consumed += batch.len();
    let lambda = state.lambda;

    if state.batch_index == 1 {
        if batch.len() < 2 {
            return Err(Error::usage("the first batch needs at least two samples"));
        }
        let n_train = ((batch.len() as f64 * config.first_batch_split.0).round() as usize).clamp(1, batch.len() - 1);
        let mut batch = batch;
        state.val_set = batch.split_off(n_train);
        state.train_set = batch;
        state.process.update(LogEValue::ONE);
    } else {
        let seed = seed::derive(config.seed, &[state.batch_index as u64]);
        let model = learner.fit(state.model.as_ref(), &state.train_set, &state.val_set, seed)?;
        let probs = batch.iter().map(|s| model.prob(&s.x)).collect::<Result<Vec<_>>>()?;
        let (_, points) = batch_log_evalue(&probs, &labels(&batch))?;
        let increment = LogEValue::from_log(bounded_log_evalue(&points, lambda)?)?;
        state.process.update(increment);
        if config.adapt_lambda {
            state.lambda = optimize_lambda(&points, config.lambda_bounds)?;
        }
        let previous_val = std::mem::replace(&mut state.val_set, batch);
        state.train_set.extend(previous_val);
        state.model = Some(model);
    }

    let increment = state.process.log_increments().last().map_or(0.0, |v| v.log());
    state.log.push(BatchLogEntry {
        batch: state.batch_index,
        lambda,
        log_increment: increment,
        log_e: state.process.log_e(),
        rejected: state.process.rejected_at().is_some(),
    });
    Ok(state.verdict())
}

/// Feeds batches into `state` until the e-process rejects, `max_batches`
/// batches have been consumed in total, or the stream runs dry.
pub fn ec2st_continue<L: Learner, I: Iterator<Item = Vec<LabeledSample>>>(
    state: &mut Ec2stState<L::Model>,
    stream: &mut I,
    config: &Ec2stConfig,
    learner: &L,
    max_batches: usize,
) -> Result<Verdict> {
    while state.batch_index < max_batches && state.process.rejected_at().is_none() {
        let Some(batch) = stream.next() else { break };
        ec2st_step(state, batch, config, learner)?;
    }
    Ok(state.verdict())
}

/// Runs a fresh sequential test over `stream`.
pub fn ec2st_run<L: Learner, I: Iterator<Item = Vec<LabeledSample>>>(
    stream: &mut I,
    config: &Ec2stConfig,
    learner: &L,
    max_batches: usize,
) -> Result<(Verdict, Ec2stState<L::Model>)> {
    let mut state = Ec2stState::new(config)?;
    let verdict = ec2st_continue(&mut state, stream, config, learner, max_batches)?;
    Ok((verdict, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BatchStream, BlobConfig, Source};

    fn pt(log_e: f64) -> PointEValue {
        PointEValue::new(log_e, 0.0)
    }

    #[test]
    fn batch_evalue_examples() {
        let (l, pts) = batch_log_evalue(&[0.5, 0.5, 0.5, 0.5], &[0, 1, 1, 0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(pts.iter().all(|p| p.log_e == 0.0));
        let (l, _) = batch_log_evalue(&[0.9, 0.1], &[1, 0]).unwrap();
        assert!((l - 2.0 * 1.8f64.ln()).abs() < 1e-14);
        assert!(batch_log_evalue(&[0.5], &[1, 0]).is_err());
        assert!(batch_log_evalue(&[], &[]).is_err());
    }

    #[test]
    fn single_class_batch_is_allowed() {
        let (l, _) = batch_log_evalue(&[0.8, 0.6], &[1, 1]).unwrap();
        assert!((l - (0.8f64.ln() + 0.6f64.ln())).abs() < 1e-15);
        assert!(l <= 0.0);
    }

    #[test]
    fn bounded_examples() {
        assert_eq!(bounded_log_evalue(&[pt(0.0); 5], 0.37).unwrap(), 0.0);
        let v = bounded_log_evalue(&[pt(2f64.ln())], 0.3).unwrap();
        assert!((v - 1.7f64.ln()).abs() < 1e-15);
        assert!(bounded_log_evalue(&[pt(0.0)], 0.0).is_err());
        assert!(bounded_log_evalue(&[pt(0.0)], 1.0).is_err());
    }

    #[test]
    fn flat_objective_returns_lower_bound() {
        assert_eq!(optimize_lambda(&[pt(0.0); 4], (1e-6, 1.0 - 1e-6)).unwrap(), 1e-6);
        assert!(optimize_lambda(&[], (0.1, 0.9)).is_err());
    }

    #[test]
    fn dominant_alternative_returns_lower_bound() {
        let p = PointEValue::new(0.9f64.ln(), 0.5f64.ln());
        assert_eq!(optimize_lambda(&[p], (1e-6, 1.0 - 1e-6)).unwrap(), 1e-6);
        // grid agrees: objective decreasing
        let f = |l: f64| lambda_objective(&[p], l);
        assert!(f(0.1) > f(0.2) && f(0.5) > f(0.9));
    }

    #[test]
    fn weak_alternative_returns_upper_bound() {
        let p = PointEValue::new(0.1f64.ln(), 0.5f64.ln());
        assert_eq!(optimize_lambda(&[p], (0.01, 0.99)).unwrap(), 0.99);
    }

    #[test]
    fn config_validation() {
        assert!(Ec2stConfig::default().validate().is_ok());
        let bad = Ec2stConfig {
            lambda_bounds: (0.0, 0.5),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = Ec2stConfig {
            initial_lambda: 0.99,
            lambda_bounds: (0.1, 0.9),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = Ec2stConfig {
            first_batch_split: (0.5, 0.6),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_batch_only_splits() {
        let cfg = Ec2stConfig::default();
        let learner = FixedLearner(ConstantClassifier(0.9));
        let mut stream = BatchStream::new(Source::Blob(BlobConfig::default()), 90, true, 1).unwrap();
        let (v, state) = ec2st_run(&mut stream, &cfg, &learner, 1).unwrap();
        assert!(!v.rejected);
        assert_eq!(v.final_log_e, 0.0);
        assert_eq!(v.samples_consumed, 90);
        assert_eq!(state.train_set.len(), 72);
        assert_eq!(state.val_set.len(), 18);
    }

    #[test]
    fn data_plumbing_keeps_sets_disjoint_and_complete() {
        let cfg = Ec2stConfig::default();
        let learner = FixedLearner(ConstantClassifier(0.5));
        let stream = BatchStream::new(Source::Blob(BlobConfig::default()), 10, true, 2).unwrap();
        let batches: Vec<_> = stream.take(4).collect();
        let mut state = Ec2stState::new(&cfg).unwrap();
        for (m, batch) in batches.iter().enumerate() {
            ec2st_step(&mut state, batch.clone(), &cfg, &learner).unwrap();
            if m >= 1 {
                assert_eq!(&state.val_set, batch);
                let expect: Vec<_> = batches[..m].concat();
                assert_eq!(state.train_set, expect);
            }
        }
    }

    #[test]
    fn oracle_null_classifier_never_moves() {
        let cfg = Ec2stConfig::default();
        let learner = FixedLearner(ConstantClassifier(0.5));
        let mut stream = BatchStream::new(Source::Blob(BlobConfig::null(1.0)), 20, true, 3).unwrap();
        let (v, state) = ec2st_run(&mut stream, &cfg, &learner, 30).unwrap();
        assert!(!v.rejected);
        assert!(state.process.log_increments().iter().all(|i| i.log() == 0.0));
    }

    #[test]
    fn stream_exhaustion_returns_consumed_count() {
        let samples: Vec<_> = (0..50)
            .map(|i| LabeledSample { x: vec![i as f64], y: (i % 2) as u8 })
            .collect();
        let mut stream = BatchStream::new(Source::Dataset { samples }, 20, false, 0).unwrap();
        let (v, _) = ec2st_run(&mut stream, &Ec2stConfig::default(), &FixedLearner(ConstantClassifier(0.5)), 10).unwrap();
        assert!(!v.rejected);
        assert_eq!(v.samples_consumed, 40);
    }

    #[test]
    fn batch_log_lines() {
        let entries = vec![BatchLogEntry {
            batch: 1,
            lambda: 0.5,
            log_increment: 0.0,
            log_e: 0.0,
            rejected: false,
        }];
        let mut buf = Vec::new();
        write_batch_log(&mut buf, &entries).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"batch\":1,\"lambda\":0.5,\"log_increment\":0.0,\"log_e\":0.0,\"rejected\":false}\n"
        );
    }
}
