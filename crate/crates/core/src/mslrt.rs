//! Split likelihood-ratio e-variables.
//!
//! For batch `m` an alternative density is fitted on every earlier point and
//! the null is fitted by maximum likelihood on the batch itself:
//!
//! ```text
//!     E(m) = Π_n p_A(x_n | x^(<m)) / p_0(x_n | θ̂₀(x^(m)))
//! ```
//!
//! Because the denominator is the maximum over the null family, `E(m)` is an
//! e-value for every member of the family. An under-maximised denominator
//! inflates `E`, so iterative null fits must certify convergence.
//!
//! The predictive conditional-independence variant tests `Y ⊥ X | Z` with a
//! classifier on `(x, z)` in the numerator and a model of `Y` given `Z` in
//! the denominator.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ec2st::{check_probs_labels, log_prob_of_label, sum_log_e, PointEValue};
use crate::eprocess::{compensated_sum, EProcess, LogEValue, Verdict};
use crate::models::{bernoulli_mle, gaussian_mean_mle, BernoulliNull, GaussianMeanModel};
use crate::{seed, Error, Result};

/// A normalised density over samples of type `X`.
pub trait Density<X> {
    fn log_density(&self, x: &X) -> Result<f64>;
}

impl Density<f64> for GaussianMeanModel {
    fn log_density(&self, x: &f64) -> Result<f64> {
        Ok(GaussianMeanModel::log_density(self, *x))
    }
}

/// Fits the alternative on all samples from earlier batches.
pub trait AltLearner<X> {
    type Fitted: Density<X>;
    fn fit(&self, history: &[X]) -> Result<Self::Fitted>;
}

/// A null family with an exact maximum-likelihood fit.
pub trait NullFamily<X> {
    type Fitted: Density<X>;
    fn mle(&self, batch: &[X]) -> Result<Self::Fitted>;
}

/// `{N(μ, 1) : μ ∈ ℝ}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeanFamily;

impl NullFamily<f64> for GaussianMeanFamily {
    type Fitted = GaussianMeanModel;
    fn mle(&self, batch: &[f64]) -> Result<GaussianMeanModel> {
        gaussian_mean_mle(batch)
    }
}

/// The single distribution `N(mean, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianSingleton {
    pub mean: f64,
}

impl NullFamily<f64> for GaussianSingleton {
    type Fitted = GaussianMeanModel;
    fn mle(&self, batch: &[f64]) -> Result<GaussianMeanModel> {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        GaussianMeanModel::new(self.mean, 1.0)
    }
}

/// `N(x̄, 1)` with `x̄` the mean of the history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanGaussian;

impl AltLearner<f64> for RunningMeanGaussian {
    type Fitted = GaussianMeanModel;
    fn fit(&self, history: &[f64]) -> Result<GaussianMeanModel> {
        gaussian_mean_mle(history)
    }
}

/// Ignores the history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedAlternative<D>(pub D);

impl<X, D: Density<X> + Clone> AltLearner<X> for FixedAlternative<D> {
    type Fitted = D;
    fn fit(&self, _history: &[X]) -> Result<D> {
        Ok(self.0.clone())
    }
}

/// `Σ_n ln alt(x_n) − Σ_n ln null(x_n; θ̂₀(batch))`.
pub fn msplit_batch_log_evalue<X, A, N>(alt: &A, null_family: &N, batch: &[X]) -> Result<f64>
where
    A: Density<X>,
    N: NullFamily<X>,
{
    if batch.is_empty() {
        return Err(Error::usage("empty batch"));
    }
    let null = null_family.mle(batch)?;
    let num = batch.iter().map(|x| alt.log_density(x)).collect::<Result<Vec<_>>>()?;
    let den = batch.iter().map(|x| null.log_density(x)).collect::<Result<Vec<_>>>()?;
    Ok(compensated_sum(num.into_iter().chain(den.into_iter().map(|d| -d))))
}

/// State of a split likelihood-ratio run.
#[derive(Debug, Clone, PartialEq)]
pub struct MsplitState<X> {
    pub history: Vec<X>,
    pub process: EProcess,
    pub batches: usize,
}

impl<X: Clone> MsplitState<X> {
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(MsplitState {
            history: Vec::new(),
            process: EProcess::new(alpha)?,
            batches: 0,
        })
    }

    /// Scores `batch` against the alternative fitted on the history, then
    /// appends it to the history. With no history yet the batch contributes
    /// `E = 1`.
    pub fn step<A, N>(&mut self, batch: &[X], learner: &A, null_family: &N) -> Result<LogEValue>
    where
        A: AltLearner<X>,
        N: NullFamily<X>,
    {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let inc = if self.history.is_empty() {
            LogEValue::ONE
        } else {
            let alt = learner.fit(&self.history)?;
            LogEValue::from_log(msplit_batch_log_evalue(&alt, null_family, batch)?)?
        };
        self.process.update(inc);
        self.history.extend_from_slice(batch);
        self.batches += 1;
        Ok(inc)
    }

    pub fn verdict(&self) -> Verdict {
        self.process.verdict(self.history.len())
    }
}

/// Runs until rejection, `max_batches`, or the end of the stream.
pub fn msplit_run<X, I, A, N>(
    stream: I,
    learner: &A,
    null_family: &N,
    alpha: f64,
    max_batches: usize,
) -> Result<Verdict>
where
    X: Clone,
    I: IntoIterator<Item = Vec<X>>,
    A: AltLearner<X>,
    N: NullFamily<X>,
{
    let mut state = MsplitState::new(alpha)?;
    for batch in stream.into_iter().take(max_batches) {
        state.step(&batch, learner, null_family)?;
        if state.process.rejected_at().is_some() {
            break;
        }
    }
    Ok(state.verdict())
}

/// Endless stream of `N(mean, 1)` scalar batches; batch `m` depends only on
/// `(seed, m)`.
#[derive(Debug, Clone)]
pub struct GaussianScalarStream {
    pub mean: f64,
    pub batch_size: usize,
    pub seed: u64,
    cursor: usize,
}

impl GaussianScalarStream {
    pub fn new(mean: f64, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || !mean.is_finite() {
            return Err(Error::usage("scalar stream needs a positive batch size and finite mean"));
        }
        Ok(GaussianScalarStream {
            mean,
            batch_size,
            seed,
            cursor: 0,
        })
    }
}

impl Iterator for GaussianScalarStream {
    type Item = Vec<f64>;
    fn next(&mut self) -> Option<Vec<f64>> {
        let mut rng = seed::child_rng(self.seed, &[self.cursor as u64]);
        self.cursor += 1;
        Some(
            (0..self.batch_size)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    self.mean + z
                })
                .collect(),
        )
    }
}

/// Models for `Y | Z` in the conditional test's denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionalNull {
    /// `Y ~ Bern(q)`, ignoring `Z`.
    Bernoulli,
    /// A separate `Bern(q_z)` for every distinct value of `Z`.
    PerStratumBernoulli,
    /// `P(Y = 1 | z) = σ(w₀ + wᵀz)`, fitted by Newton's method. Needs
    /// `allow_iterative_mle`.
    Logistic,
}

/// Gradient-norm tolerance for iterative null fits.
pub const NULL_FIT_TOLERANCE: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcitNull {
    pub family: ConditionalNull,
    /// Opt-in for families whose MLE is not available in closed form.
    pub allow_iterative_mle: bool,
}

impl PcitNull {
    pub fn closed_form(family: ConditionalNull) -> Self {
        PcitNull {
            family,
            allow_iterative_mle: false,
        }
    }

    /// `ln p(y_n | z_n; θ̂₀)` for every point, with `θ̂₀` fitted on the batch.
    pub fn fitted_log_densities(&self, labels: &[u8], z: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self.family {
            ConditionalNull::Bernoulli => {
                let null = bernoulli_mle(labels)?;
                labels.iter().map(|&y| null.log_density(y)).collect()
            }
            ConditionalNull::PerStratumBernoulli => {
                let mut strata: BTreeMap<Vec<u64>, Vec<u8>> = BTreeMap::new();
                for (zi, &y) in z.iter().zip(labels) {
                    strata.entry(stratum_key(zi)).or_default().push(y);
                }
                let fits = strata
                    .into_iter()
                    .map(|(k, ys)| Ok((k, bernoulli_mle(&ys)?)))
                    .collect::<Result<BTreeMap<Vec<u64>, BernoulliNull>>>()?;
                z.iter()
                    .zip(labels)
                    .map(|(zi, &y)| fits[&stratum_key(zi)].log_density(y))
                    .collect()
            }
            ConditionalNull::Logistic => {
                if !self.allow_iterative_mle {
                    return Err(Error::usage(
                        "the logistic null has no closed-form MLE; set allow_iterative_mle to use it",
                    ));
                }
                let w = logistic_mle(labels, z)?;
                Ok(z.iter()
                    .zip(labels)
                    .map(|(zi, &y)| logistic_log_prob(&w, zi, y))
                    .collect())
            }
        }
    }
}

fn stratum_key(z: &[f64]) -> Vec<u64> {
    z.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

fn linear_predictor(w: &[f64], z: &[f64]) -> f64 {
    w[0] + w[1..].iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
}

/// `ln σ(η)` or `ln(1 − σ(η))`, stable for large `|η|`.
fn logistic_log_prob(w: &[f64], z: &[f64], y: u8) -> f64 {
    let eta = linear_predictor(w, z);
    let s = if y == 1 { eta } else { -eta };
    -(if s > 0.0 {
        (-s).exp().ln_1p()
    } else {
        -s + s.exp().ln_1p()
    })
}

/// Newton–Raphson for logistic regression of `labels` on `[1, z]`.
pub fn logistic_mle(labels: &[u8], z: &[Vec<f64>]) -> Result<Vec<f64>> {
    if labels.is_empty() || labels.len() != z.len() {
        return Err(Error::usage("logistic fit needs one covariate row per label"));
    }
    let dim = z[0].len() + 1;
    if z.iter().any(|r| r.len() + 1 != dim) {
        return Err(Error::usage("ragged covariate rows"));
    }
    let mut w = vec![0.0; dim];
    let mut grad_norm = f64::INFINITY;
    for iter in 0..NEWTON_MAX_ITER {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![vec![0.0; dim]; dim];
        for (zi, &y) in z.iter().zip(labels) {
            let p = crate::models::sigmoid(linear_predictor(&w, zi));
            let r = y as f64 - p;
            let v = p * (1.0 - p);
            let row: Vec<f64> = std::iter::once(1.0).chain(zi.iter().copied()).collect();
            for a in 0..dim {
                grad[a] += r * row[a];
                for b in 0..dim {
                    hess[a][b] += v * row[a] * row[b];
                }
            }
        }
        grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm <= NULL_FIT_TOLERANCE {
            return Ok(w);
        }
        let Some(step) = solve(hess, grad) else {
            return Err(Error::NullFitNotConverged {
                iterations: iter,
                gradient_norm: grad_norm,
            });
        };
        for (wi, s) in w.iter_mut().zip(step) {
            *wi += s;
        }
        if w.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::NullFitNotConverged {
        iterations: NEWTON_MAX_ITER,
        gradient_norm: grad_norm,
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `Σ_n ln p_A(y_n | x_n, z_n) − Σ_n ln p(y_n | z_n; θ̂₀)`, where `probs` are
/// the classifier's `P(y = 1 | x, z)` and `θ̂₀` is fitted on this batch.
pub fn pcit_batch_log_evalue(
    probs: &[f64],
    labels: &[u8],
    z: &[Vec<f64>],
    null: &PcitNull,
) -> Result<(f64, Vec<PointEValue>)> {
    check_probs_labels(probs, labels)?;
    if z.len() != labels.len() {
        return Err(Error::usage(format!("{} covariate rows for {} labels", z.len(), labels.len())));
    }
    let log_null = null.fitted_log_densities(labels, z)?;
    let points: Vec<PointEValue> = probs
        .iter()
        .zip(labels)
        .zip(log_null)
        .map(|((&p, &y), l0)| PointEValue::new(log_prob_of_label(p, y), l0))
        .collect();
    Ok((sum_log_e(&points), points))
}
