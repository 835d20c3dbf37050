//! Log-domain e-values and the running e-process.
//!
//! An e-value is a non-negative statistic whose expectation under the null is
//! at most one. Products of conditionally valid e-values stay valid, so a
//! stream of batch e-values can be multiplied into an e-process and checked
//! against `1/α` after every batch without inflating the type-I error
//! (Ville's inequality):
//!
//! ```text
//!     P_H0(∃ m : E(≤m) ≥ 1/α) ≤ α
//! ```
//!
//! Everything here is kept in natural-log units. Running products over many
//! batches leave the range of `f64` quickly in linear space.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest log e-value represented. Exact zeros (and anything below
/// `exp(-745)`) are floored here so that every `LogEValue` is finite.
pub const LOG_FLOOR: f64 = -745.0;

/// Natural log of a non-negative evidence value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogEValue(f64);

impl LogEValue {
    pub const ONE: LogEValue = LogEValue(0.0);

    /// Wraps a log e-value. `-inf` and anything below [`LOG_FLOOR`] are
    /// floored; NaN and `+inf` are rejected.
    pub fn from_log(log_e: f64) -> Result<Self> {
        if log_e.is_nan() || log_e == f64::INFINITY {
            return Err(Error::usage(format!("log e-value must be finite, got {log_e}")));
        }
        Ok(LogEValue(log_e.max(LOG_FLOOR)))
    }

    /// Wraps a linear-domain e-value `e ≥ 0`.
    pub fn from_linear(e: f64) -> Result<Self> {
        if !(e >= 0.0) || !e.is_finite() {
            return Err(Error::usage(format!("e-value must be finite and non-negative, got {e}")));
        }
        Self::from_log(e.ln())
    }

    pub fn log(self) -> f64 {
        self.0
    }

    /// Linear-domain value; may overflow to `inf` for very large evidence.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    /// `min{1, 1/E}`, the conservative p-value implied by an e-value.
    pub fn to_pvalue(self) -> f64 {
        (-self.0).exp().min(1.0)
    }

    /// Fixed-horizon decision: reject iff `E ≥ 1/α`.
    pub fn rejects(self, alpha: f64) -> Result<bool> {
        Ok(self.0 >= log_threshold(alpha)?)
    }
}

/// `-ln α`, validated for `α ∈ (0, 1]`.
pub fn log_threshold(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::usage(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(-alpha.ln())
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `ln Σ exp(xᵢ)` without overflow. Returns `-inf` for an empty input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Product of e-values (sum of logs).
pub fn product(values: &[LogEValue]) -> Result<LogEValue> {
    if values.is_empty() {
        return Err(Error::usage("product of an empty sequence of e-values"));
    }
    LogEValue::from_log(compensated_sum(values.iter().map(|v| v.0)))
}

/// `g·E_hi + (1−g)·E_lo`, computed in log space.
pub fn convex_combine(g: f64, e_hi: LogEValue, e_lo: LogEValue) -> Result<LogEValue> {
    if !(0.0..=1.0).contains(&g) {
        return Err(Error::usage(format!("mixture weight must lie in [0, 1], got {g}")));
    }
    if g == 1.0 {
        return Ok(e_hi);
    }
    if g == 0.0 {
        return Ok(e_lo);
    }
    let max = e_hi.0.max(e_lo.0);
    let mixed = g * (e_hi.0 - max).exp() + (1.0 - g) * (e_lo.0 - max).exp();
    LogEValue::from_log(max + mixed.ln())
}

/// Arithmetic mean of e-values, computed in log space.
pub fn average(values: &[LogEValue]) -> Result<LogEValue> {
    if values.is_empty() {
        return Err(Error::usage("average of an empty sequence of e-values"));
    }
    let logs: Vec<f64> = values.iter().map(|v| v.0).collect();
    LogEValue::from_log(log_sum_exp(&logs) - (values.len() as f64).ln())
}

/// Running product of batch e-values with a monotone rejection ledger.
///
/// Batch numbers are 1-based: the first increment belongs to batch 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EProcess {
    alpha: f64,
    log_increments: Vec<LogEValue>,
    log_running: Vec<f64>,
    rejected_at: Option<usize>,
}

impl EProcess {
    pub fn new(alpha: f64) -> Result<Self> {
        log_threshold(alpha)?;
        Ok(EProcess {
            alpha,
            log_increments: Vec::new(),
            log_running: Vec::new(),
            rejected_at: None,
        })
    }

    /// Multiplies in the next batch e-value. Returns `true` if this increment
    /// caused the first crossing of `1/α`.
    pub fn update(&mut self, increment: LogEValue) -> bool {
        let running = self.log_e() + increment.0;
        self.log_increments.push(increment);
        self.log_running.push(running);
        if self.rejected_at.is_none() && running >= -self.alpha.ln() {
            self.rejected_at = Some(self.log_running.len());
            return true;
        }
        false
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Current log e-value; `0` before any increment.
    pub fn log_e(&self) -> f64 {
        self.log_running.last().copied().unwrap_or(0.0)
    }

    pub fn log_increments(&self) -> &[LogEValue] {
        &self.log_increments
    }

    pub fn log_running(&self) -> &[f64] {
        &self.log_running
    }

    pub fn batches(&self) -> usize {
        self.log_increments.len()
    }

    /// First batch (1-based) at which the running product reached `1/α`.
    pub fn rejected_at(&self) -> Option<usize> {
        self.rejected_at
    }

    pub fn verdict(&self, samples_consumed: usize) -> Verdict {
        Verdict {
            rejected: self.rejected_at.is_some(),
            at_batch: self.rejected_at,
            final_log_e: self.log_e(),
            samples_consumed,
        }
    }
}

/// Outcome of a sequential test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub rejected: bool,
    /// 1-based batch index of the first rejection.
    pub at_batch: Option<usize>,
    pub final_log_e: f64,
    pub samples_consumed: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn le(x: f64) -> LogEValue {
        LogEValue::from_linear(x).unwrap()
    }

    #[test]
    fn product_examples() {
        let p = product(&[le(2.0), le(0.5), le(3.0)]).unwrap();
        assert!((p.log() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(product(&[le(1.0), le(1.0)]).unwrap().log(), 0.0);
        assert!(product(&[]).is_err());
    }

    #[test]
    fn convex_combine_examples() {
        assert_eq!(convex_combine(1.0, le(5.0), le(0.1)).unwrap(), le(5.0));
        assert_eq!(convex_combine(0.5, le(1.0), le(1.0)).unwrap().log(), 0.0);
        let c = convex_combine(0.3, le(2.0), le(0.5)).unwrap();
        assert!((c.log() - 0.95f64.ln()).abs() < 1e-15);
        assert!(convex_combine(1.5, le(1.0), le(1.0)).is_err());
        assert!(convex_combine(-0.1, le(1.0), le(1.0)).is_err());
    }

    #[test]
    fn average_examples() {
        let a = average(&[le(2.0), le(0.5)]).unwrap();
        assert!((a.log() - 1.25f64.ln()).abs() < 1e-15);
        assert!(average(&[le(1.0); 7]).unwrap().log().abs() < 1e-15);
        assert!(average(&[]).is_err());
    }

    #[test]
    fn zero_is_floored() {
        assert_eq!(le(0.0).log(), LOG_FLOOR);
        assert_eq!(LogEValue::from_log(f64::NEG_INFINITY).unwrap().log(), LOG_FLOOR);
        assert!(LogEValue::from_log(f64::NAN).is_err());
        assert!(LogEValue::from_linear(-1.0).is_err());
    }

    #[test]
    fn update_rejects_on_crossing() {
        let mut p = EProcess::new(0.05).unwrap();
        p.update(le(10.0));
        assert!(p.rejected_at().is_none());
        assert!(p.update(le(3.0)));
        assert_eq!(p.rejected_at(), Some(2));
        assert!((p.log_e() - 30f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unit_increment_keeps_value() {
        let mut p = EProcess::new(0.05).unwrap();
        p.update(le(4.0));
        let before = p.log_e();
        p.update(LogEValue::ONE);
        assert_eq!(p.log_e(), before);
    }

    #[test]
    fn running_sums_without_rejection() {
        let mut p = EProcess::new(0.05).unwrap();
        for e in [2.0, 0.5, 3.0] {
            p.update(le(e));
        }
        let expect = [2f64.ln(), 0.0, 3f64.ln()];
        for (got, want) in p.log_running().iter().zip(expect) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(p.rejected_at().is_none());
        let v = p.verdict(12);
        assert!(!v.rejected && v.at_batch.is_none());
    }

    #[test]
    fn pvalue_examples() {
        assert!((le(4.0).to_pvalue() - 0.25).abs() < 1e-15);
        assert_eq!(le(0.5).to_pvalue(), 1.0);
        assert!((le(20.0).to_pvalue() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn fixed_decision_examples() {
        assert!(le(25.0).rejects(0.05).unwrap());
        assert!(!le(19.99).rejects(0.05).unwrap());
        assert!(le(1.0).rejects(1.0).unwrap());
        assert!(le(1.0).rejects(0.0).is_err());
        assert!(le(1.0).rejects(1.5).is_err());
    }

    proptest! {
        #[test]
        fn pvalue_in_unit_interval_and_monotone(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let plo = LogEValue::from_log(lo).unwrap().to_pvalue();
            let phi = LogEValue::from_log(hi).unwrap().to_pvalue();
            prop_assert!(plo > 0.0 && plo <= 1.0);
            prop_assert!(phi > 0.0 && phi <= 1.0);
            prop_assert!(phi <= plo);
        }

        #[test]
        fn convex_combination_between_inputs(g in 0.0f64..=1.0, a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let c = convex_combine(g, LogEValue::from_log(a).unwrap(), LogEValue::from_log(b).unwrap()).unwrap();
            let tol = 1e-12;
            prop_assert!(c.log() >= a.min(b) - tol && c.log() <= a.max(b) + tol);
        }

        #[test]
        fn rejection_ledger_is_monotone(incs in proptest::collection::vec(-3.0f64..3.0, 1..60)) {
            let mut p = EProcess::new(0.1).unwrap();
            let mut first = None;
            for inc in incs {
                p.update(LogEValue::from_log(inc).unwrap());
                if first.is_none() {
                    first = p.rejected_at();
                }
                prop_assert_eq!(p.rejected_at(), first);
            }
            if let Some(m) = first {
                prop_assert!(p.log_running()[m - 1] >= -(0.1f64).ln());
                prop_assert!(p.log_running()[..m - 1].iter().all(|&r| r < -(0.1f64).ln()));
            }
        }
    }
}
