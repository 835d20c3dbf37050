//! Closed-form maximum-likelihood null models.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `Bern(q̂)` fitted to a batch of labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BernoulliNull {
    pub q_hat: f64,
}

impl BernoulliNull {
    pub fn new(q_hat: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q_hat) {
            return Err(Error::usage(format!("Bernoulli parameter must lie in [0, 1], got {q_hat}")));
        }
        Ok(BernoulliNull { q_hat })
    }

    /// `ln P(y)`. Evaluating a label the fitted model gives probability zero
    /// is a domain error: it cannot happen for labels from the fitting batch.
    pub fn log_density(&self, y: u8) -> Result<f64> {
        let p = match y {
            1 => self.q_hat,
            0 => 1.0 - self.q_hat,
            _ => return Err(Error::usage(format!("label must be 0 or 1, got {y}"))),
        };
        if p == 0.0 {
            return Err(Error::Domain(format!(
                "label {y} has probability zero under Bern({})",
                self.q_hat
            )));
        }
        Ok(p.ln())
    }
}

/// `q̂ = #ones / n`.
pub fn bernoulli_mle(labels: &[u8]) -> Result<BernoulliNull> {
    if labels.is_empty() {
        return Err(Error::usage("Bernoulli MLE of an empty label vector"));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::usage("labels must be 0 or 1"));
    }
    let ones = labels.iter().filter(|&&y| y == 1).count();
    Ok(BernoulliNull {
        q_hat: ones as f64 / labels.len() as f64,
    })
}

/// `N(mean, variance)` with a fixed, known variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeanModel {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianMeanModel {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::usage("Gaussian model needs a finite mean and positive variance"));
        }
        Ok(GaussianMeanModel { mean, variance })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (2.0 * PI * self.variance).ln() - d * d / (2.0 * self.variance)
    }
}

/// Sample mean with unit variance.
pub fn gaussian_mean_mle(xs: &[f64]) -> Result<GaussianMeanModel> {
    if xs.is_empty() {
        return Err(Error::usage("Gaussian MLE of an empty sample"));
    }
    GaussianMeanModel::new(xs.iter().sum::<f64>() / xs.len() as f64, 1.0)
}
